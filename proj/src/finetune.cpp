#include "parakit/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "parakit/correlation.hpp"
#include "parakit/optim.hpp"

namespace parakit {

void FinetuneConfig::validate() const {
  if (batch_size < 1) fail_config("finetune: batch_size must be >= 1");
  if (lr <= 0.0) fail_config("finetune: lr must be > 0");
  if (total_steps < 1) fail_config("finetune: total_steps must be >= 1");
  if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
    fail_config("finetune: validation_fraction must lie in (0,1)");
  if (eval_every < 1) fail_config("finetune: eval_every must be >= 1");
  if (freeze_layers < 0) fail_config("finetune: freeze_layers must be >= 0");
}

std::pair<std::vector<ScoredPair>, std::vector<ScoredPair>> split_by_reference(
    const std::vector<ScoredPair>& dataset, double fraction, std::uint64_t seed) {
  if (dataset.empty()) fail_config("split: empty dataset");
  if (fraction <= 0.0 || fraction >= 1.0) fail_config("split: fraction must lie in (0,1)");

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) groups[dataset[i].ref].push_back(i);
  if (groups.size() < 2) fail_degenerate("split: need at least two distinct references");

  std::vector<const std::vector<std::size_t>*> order;
  order.reserve(groups.size());
  for (const auto& [ref, members] : groups) order.push_back(&members);
  SeededRng rng(seed);
  rng.shuffle(order);

  const double target = fraction * static_cast<double>(dataset.size());
  std::vector<bool> in_val(dataset.size(), false);
  std::size_t val_count = 0, train_count = dataset.size();
  for (const auto* members : order) {
    const double now = std::abs(static_cast<double>(val_count) - target);
    const double taken = std::abs(static_cast<double>(val_count + members->size()) - target);
    if (taken < now && train_count > members->size()) {
      for (std::size_t i : *members) in_val[i] = true;
      val_count += members->size();
      train_count -= members->size();
    }
  }
  if (val_count == 0) {
    // No single group improved on an empty side; concede the smallest one.
    const std::vector<std::size_t>* smallest = nullptr;
    for (const auto* members : order) {
      if (members->size() < dataset.size() && (!smallest || members->size() < smallest->size()))
        smallest = members;
    }
    for (std::size_t i : *smallest) in_val[i] = true;
  }

  std::pair<std::vector<ScoredPair>, std::vector<ScoredPair>> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (in_val[i] ? out.second : out.first).push_back(dataset[i]);
  }
  return out;
}

namespace {

using Tensor = BasicTensor<float>;

struct Prepared {
  PackedPair pair;
  double target = 0.0;  // standardized score
};

std::vector<Prepared> prepare_all(const std::vector<ScoredPair>& items, const Vocab& vocab,
                                  int max_len, double mean, double sd) {
  std::vector<Prepared> out;
  out.reserve(items.size());
  for (const auto& sp : items) {
    Prepared p;
    p.pair = pack_pair(vocab.encode_text(sp.ref), vocab.encode_text(sp.cand), max_len);
    p.target = (sp.score - mean) / sd;
    out.push_back(std::move(p));
  }
  return out;
}

double raw_score(const ParaphraseModel<float>& model, const PackedPair& pair, SeededRng& rng) {
  auto edit = model.edit_encode(pair, false, rng);
  return static_cast<double>(model.score_value(edit.z).item());
}

double mse_over(const ParaphraseModel<float>& model, const std::vector<Prepared>& items,
                std::vector<double>* preds_out) {
  NoGradGuard guard;
  SeededRng rng(0);
  double sum = 0.0;
  for (const auto& p : items) {
    const double pred = raw_score(model, p.pair, rng);
    if (preds_out) preds_out->push_back(pred);
    const double d = pred - p.target;
    sum += d * d;
  }
  return sum / static_cast<double>(items.size());
}

}  // namespace

FinetuneResult finetune_run(ParaphraseModel<float>& model, const Vocab& vocab,
                            const std::vector<ScoredPair>& train,
                            const std::vector<ScoredPair>& validation, const FinetuneConfig& cfg,
                            const std::string& out_dir) {
  cfg.validate();
  if (train.empty()) fail_config("finetune: empty train set");
  if (validation.empty()) fail_config("finetune: empty validation set");
  if (vocab.size() != model.config().vocab_size)
    fail_config("finetune: vocab size " + std::to_string(vocab.size()) +
                " does not match model config " + std::to_string(model.config().vocab_size));
  if (cfg.freeze_layers > model.config().layers)
    fail_config("finetune: freeze_layers exceeds the model's layer count");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail_io("finetune: cannot create output directory " + out_dir);

  double mean = 0.0;
  for (const auto& sp : train) mean += sp.score;
  mean /= static_cast<double>(train.size());
  double var = 0.0;
  for (const auto& sp : train) var += (sp.score - mean) * (sp.score - mean);
  double sd = std::sqrt(var / static_cast<double>(train.size()));
  if (sd < 1e-12) sd = 1.0;  // constant scores regress to zero, predictions to the constant

  const int max_len = model.config().max_len;
  auto train_prep = prepare_all(train, vocab, max_len, mean, sd);
  auto val_prep = prepare_all(validation, vocab, max_len, mean, sd);
  std::vector<double> val_targets;
  val_targets.reserve(val_prep.size());
  for (const auto& p : val_prep) val_targets.push_back(p.target);

  SeededRng base(cfg.seed);
  SeededRng order_rng = base.derive(1);
  SeededRng drop_rng = base.derive(2);
  SeededRng sample_rng = base.derive(3);

  // The train-side curve is measured on a fixed sample so long runs stay cheap.
  std::vector<std::size_t> sample(train_prep.size());
  std::iota(sample.begin(), sample.end(), std::size_t{0});
  sample_rng.shuffle(sample);
  if (sample.size() > 256) sample.resize(256);
  std::vector<Prepared> train_probe;
  train_probe.reserve(sample.size());
  for (std::size_t i : sample) train_probe.push_back(train_prep[i]);

  auto frozen = [&](const std::string& name) {
    if (cfg.freeze_layers == 0) return false;
    if (name.rfind("embed.", 0) == 0) return true;
    for (int l = 0; l < cfg.freeze_layers; ++l) {
      if (name.rfind("edit.layer" + std::to_string(l) + ".", 0) == 0) return true;
    }
    return false;
  };
  std::vector<Tensor> tensors;
  for (auto& [name, tensor] : model.params()) {
    const std::string group = param_group(name);
    if (group == "s2s" || group == "mlm" || group == "cls") continue;  // heads left as pretrained
    if (frozen(name)) continue;
    tensors.push_back(tensor);
  }

  Adam<float>::Config adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam<float> opt(tensors, adam_cfg);

  FinetuneResult result;
  result.score_mean = mean;
  result.score_sd = sd;
  result.curve_csv_path = out_dir + "/validation_curve.csv";
  std::ofstream csv(result.curve_csv_path, std::ios::trunc);
  if (!csv) fail_io("finetune: cannot open " + result.curve_csv_path);
  csv << "step,train_mse,val_mse,val_pearson\n";

  char row[256];
  auto log_point = [&](int step) {
    CurvePoint pt;
    pt.step = step;
    pt.train_mse = mse_over(model, train_probe, nullptr);
    std::vector<double> preds;
    pt.val_mse = mse_over(model, val_prep, &preds);
    try {
      pt.val_pearson = pearson(preds, val_targets);
    } catch (const Error&) {
      pt.val_pearson = std::numeric_limits<double>::quiet_NaN();
    }
    std::snprintf(row, sizeof(row), "%d,%.10g,%.10g,%.10g\n", step, pt.train_mse, pt.val_mse,
                  pt.val_pearson);
    csv << row;
    csv.flush();
    result.curve.push_back(pt);
  };

  std::vector<std::size_t> order(train_prep.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  log_point(0);
  for (int step = 1; step <= cfg.total_steps; ++step) {
    std::vector<Tensor> sq_terms;
    sq_terms.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ex = train_prep[next_index()];
      auto edit = model.edit_encode(ex.pair, true, drop_rng);
      Tensor diff = sub(model.score_value(edit.z),
                        Tensor::from_data({1, 1}, {static_cast<float>(ex.target)}));
      sq_terms.push_back(mul(diff, diff));
    }
    Tensor loss = sq_terms[0];
    for (std::size_t i = 1; i < sq_terms.size(); ++i) loss = add(loss, sq_terms[i]);
    loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
    if (!std::isfinite(static_cast<double>(loss.item())))
      fail_numeric("finetune: non-finite loss at step " + std::to_string(step));

    opt.zero_grad();
    loss.backward();
    clip_global_norm(tensors, cfg.clip_norm);
    opt.step();

    if (step % cfg.eval_every == 0 || step == cfg.total_steps) log_point(step);
  }

  char mean_buf[32], sd_buf[32];
  std::snprintf(mean_buf, sizeof(mean_buf), "%.17g", mean);
  std::snprintf(sd_buf, sizeof(sd_buf), "%.17g", sd);
  result.checkpoint_path = out_dir + "/finetuned.ckpt";
  save_model(result.checkpoint_path, model, vocab,
             {{"score_mean", mean_buf}, {"score_sd", sd_buf}});
  return result;
}

double predict_score(const ParaphraseModel<float>& model, const Vocab& vocab,
                     const std::string& ref, const std::string& cand, double score_mean,
                     double score_sd) {
  NoGradGuard guard;
  SeededRng rng(0);
  PackedPair pair =
      pack_pair(vocab.encode_text(ref), vocab.encode_text(cand), model.config().max_len);
  return raw_score(model, pair, rng) * score_sd + score_mean;
}

std::vector<double> predict_scores(const ParaphraseModel<float>& model, const Vocab& vocab,
                                   const std::vector<std::pair<std::string, std::string>>& pairs,
                                   double score_mean, double score_sd) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [ref, cand] : pairs)
    out.push_back(predict_score(model, vocab, ref, cand, score_mean, score_sd));
  return out;
}

}  // namespace parakit
