#include "parakit/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "parakit/optim.hpp"

namespace parakit {

void PretrainConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) fail_config("pretrain: loss weights must be >= 0");
  if (!enable_ar && !enable_mlm && !enable_cls)
    fail_config("pretrain: at least one loss term must be enabled");
  if (mask_prob < 0.0 || mask_prob > 1.0) fail_config("pretrain: mask_prob must lie in [0,1]");
  if (batch_size < 1) fail_config("pretrain: batch_size must be >= 1");
  if (lr <= 0.0) fail_config("pretrain: lr must be > 0");
  if (total_steps < 1) fail_config("pretrain: total_steps must be >= 1");
  if (warmup_steps < 0) fail_config("pretrain: warmup_steps must be >= 0");
  if (warmup_steps > total_steps) fail_config("pretrain: warmup_steps must be <= total_steps");
  if (checkpoint_every < 0) fail_config("pretrain: checkpoint_every must be >= 0");
}

const std::map<std::string, std::string>& full_scale_reference() {
  static const std::map<std::string, std::string> ref = {
      {"alpha", "2.0"},
      {"beta", "10.0"},
      {"epochs", "4"},
      {"base.lr", "4e-4"},
      {"base.warmup_steps", "1200"},
      {"base.batch_size", "64"},
      {"base.updates", "20000"},
      {"large.lr", "1e-4"},
      {"large.warmup_steps", "2400"},
      {"large.batch_size", "32"},
      {"large.updates", "40000"},
  };
  return ref;
}

double weighted_total(double l_ar, double l_mlm, double l_cls, const PretrainConfig& cfg) {
  double total = 0.0;
  if (cfg.enable_ar) total += l_ar;
  if (cfg.enable_mlm) total += cfg.alpha * l_mlm;
  if (cfg.enable_cls) total += cfg.beta * l_cls;
  return total;
}

namespace {

std::vector<int> truncated(const std::vector<int>& ids, int limit) {
  if (static_cast<int>(ids.size()) <= limit) return ids;
  return std::vector<int>(ids.begin(), ids.begin() + limit);
}

using Tensor = BasicTensor<float>;

Tensor sum_terms(std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::zeros({1});
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

}  // namespace

PreparedExample prepare_example(const ParaExample& ex, const Vocab& vocab, int max_len,
                                double mask_prob, bool mask_inputs, SeededRng& mask_rng) {
  const std::vector<int> ref_ids = vocab.encode_text(ex.ref);
  const std::vector<int> cand_ids = vocab.encode_text(ex.cand);

  PreparedExample out;
  out.edit_pair = pack_pair(ref_ids, cand_ids, max_len);
  if (mask_inputs) {
    MaskedBatch masked = apply_mlm_mask(out.edit_pair, vocab.size(), mask_prob, mask_rng);
    out.edit_pair.ids = masked.input_ids;
    out.mlm_labels = masked.labels;
  } else {
    out.mlm_labels.assign(out.edit_pair.ids.size(), kIgnoreId);
  }

  const std::vector<int> src_body = truncated(ref_ids, max_len - 2);
  const std::vector<int> cand_body = truncated(cand_ids, max_len - 1);
  out.src.reserve(src_body.size() + 2);
  out.src.push_back(Vocab::kBos);
  out.src.insert(out.src.end(), src_body.begin(), src_body.end());
  out.src.push_back(Vocab::kEos);
  out.dec_in.push_back(Vocab::kBos);
  out.dec_in.insert(out.dec_in.end(), cand_body.begin(), cand_body.end());
  out.targets = cand_body;
  out.targets.push_back(Vocab::kEos);
  out.label = ex.label;
  return out;
}

BasicTensor<float> batch_loss(const ParaphraseModel<float>& model,
                              const std::vector<PreparedExample>& batch,
                              const PretrainConfig& cfg, bool training, SeededRng& rng,
                              LossBreakdown* breakdown) {
  if (batch.empty()) fail_contract("batch_loss: empty batch");

  std::vector<Tensor> ar_sums, mlm_sums, cls_terms;
  long long ar_tokens = 0, mlm_positions = 0, cls_examples = 0;

  for (const auto& ex : batch) {
    auto edit = model.edit_encode(ex.edit_pair, training, rng);

    if (cfg.enable_mlm) {
      const int n = count_non_ignored(ex.mlm_labels);
      if (n > 0) {
        Tensor ce = cross_entropy_logits(model.mlm_logits(edit.states), ex.mlm_labels);
        mlm_sums.push_back(scale(ce, static_cast<double>(n)));
        mlm_positions += n;
      }
    }

    if (cfg.enable_cls && (ex.label == 0 || ex.label == 1)) {
      cls_terms.push_back(binary_cross_entropy_logit(model.entail_logit(edit.z), ex.label));
      ++cls_examples;
    }

    if (cfg.enable_ar) {
      Tensor logits = model.seq2seq_logits(ex.src, ex.dec_in, &edit.z, training, rng);
      Tensor ce = cross_entropy_logits(logits, ex.targets);
      const int n = count_non_ignored(ex.targets);
      ar_sums.push_back(scale(ce, static_cast<double>(n)));
      ar_tokens += n;
    }
  }

  Tensor l_ar = sum_terms(ar_sums);
  if (ar_tokens > 0) l_ar = scale(l_ar, 1.0 / static_cast<double>(ar_tokens));
  Tensor l_mlm = sum_terms(mlm_sums);
  if (mlm_positions > 0) l_mlm = scale(l_mlm, 1.0 / static_cast<double>(mlm_positions));
  Tensor l_cls = sum_terms(cls_terms);
  if (cls_examples > 0) l_cls = scale(l_cls, 1.0 / static_cast<double>(cls_examples));

  std::vector<Tensor> weighted;
  if (cfg.enable_ar) weighted.push_back(l_ar);
  if (cfg.enable_mlm) weighted.push_back(scale(l_mlm, cfg.alpha));
  if (cfg.enable_cls) weighted.push_back(scale(l_cls, cfg.beta));
  Tensor total = sum_terms(weighted);

  if (breakdown) {
    breakdown->l_ar = cfg.enable_ar ? static_cast<double>(l_ar.item()) : 0.0;
    breakdown->l_mlm = cfg.enable_mlm ? static_cast<double>(l_mlm.item()) : 0.0;
    breakdown->l_cls = cfg.enable_cls ? static_cast<double>(l_cls.item()) : 0.0;
    // Logged total is the weighted sum of the logged parts; the returned
    // tensor agrees with it to float rounding.
    breakdown->l_total = weighted_total(breakdown->l_ar, breakdown->l_mlm, breakdown->l_cls, cfg);
    breakdown->ar_tokens = ar_tokens;
    breakdown->mlm_positions = mlm_positions;
    breakdown->cls_examples = cls_examples;
  }
  return total;
}

double eval_ar(const ParaphraseModel<float>& model, const Vocab& vocab,
               const std::vector<ParaExample>& examples) {
  if (examples.empty()) fail_config("eval_ar: no examples");
  NoGradGuard guard;
  SeededRng rng(0);
  const int max_len = model.config().max_len;
  double sum = 0.0;
  long long tokens = 0;
  for (const auto& ex : examples) {
    PreparedExample prep = prepare_example(ex, vocab, max_len, 0.0, false, rng);
    auto edit = model.edit_encode(prep.edit_pair, false, rng);
    Tensor logits = model.seq2seq_logits(prep.src, prep.dec_in, &edit.z, false, rng);
    const int n = count_non_ignored(prep.targets);
    sum += static_cast<double>(cross_entropy_logits(logits, prep.targets).item()) * n;
    tokens += n;
  }
  if (tokens == 0) fail_degenerate("eval_ar: no target tokens");
  return sum / static_cast<double>(tokens);
}

PretrainResult pretrain_run(ParaphraseModel<float>& model, const Vocab& vocab,
                            const std::vector<ParaExample>& corpus, const PretrainConfig& cfg,
                            const std::string& out_dir) {
  cfg.validate();
  if (corpus.empty()) fail_config("pretrain: empty corpus");
  if (vocab.size() != model.config().vocab_size)
    fail_config("pretrain: vocab size " + std::to_string(vocab.size()) +
                " does not match model config " + std::to_string(model.config().vocab_size));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail_io("pretrain: cannot create output directory " + out_dir);

  PretrainResult result;
  result.loss_csv_path = out_dir + "/loss_log.csv";
  std::ofstream csv(result.loss_csv_path, std::ios::trunc);
  if (!csv) fail_io("pretrain: cannot open " + result.loss_csv_path);
  csv << "step,l_ar,l_mlm,l_cls,l_total,lr\n";

  SeededRng base(cfg.seed);
  SeededRng order_rng = base.derive(1);
  SeededRng mask_rng = base.derive(2);
  SeededRng drop_rng = base.derive(3);

  std::vector<std::size_t> order(corpus.size());
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

  std::vector<Tensor> tensors;
  tensors.reserve(model.params().size());
  for (auto& [name, tensor] : model.params()) tensors.push_back(tensor);
  Adam<float>::Config adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam<float> opt(tensors, adam_cfg);

  const int max_len = model.config().max_len;
  const bool mask_inputs = cfg.enable_mlm && cfg.mask_prob > 0.0;
  char row[256];

  for (int step = 1; step <= cfg.total_steps; ++step) {
    std::vector<PreparedExample> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(
          prepare_example(corpus[next_index()], vocab, max_len, cfg.mask_prob, mask_inputs,
                          mask_rng));
    }

    const double lr = warmup_constant_lr(cfg.lr, cfg.warmup_steps, step);
    opt.set_lr(lr);

    LossBreakdown bd;
    Tensor loss = batch_loss(model, batch, cfg, true, drop_rng, &bd);
    if (!std::isfinite(bd.l_total))
      fail_numeric("pretrain: non-finite loss at step " + std::to_string(step));

    opt.zero_grad();
    loss.backward();
    clip_global_norm(tensors, cfg.clip_norm);
    opt.step();

    std::snprintf(row, sizeof(row), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", step, bd.l_ar, bd.l_mlm,
                  bd.l_cls, bd.l_total, lr);
    csv << row;
    csv.flush();
    result.log.push_back(bd);
    result.lr_log.push_back(lr);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.total_steps) {
      std::string path = out_dir + "/checkpoint_step" + std::to_string(step) + ".ckpt";
      save_model(path, model, vocab);
      result.checkpoint_paths.push_back(path);
    }
  }

  std::string final_path = out_dir + "/checkpoint_final.ckpt";
  save_model(final_path, model, vocab);
  result.checkpoint_paths.push_back(final_path);
  return result;
}

}  // namespace parakit
