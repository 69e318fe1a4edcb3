#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "parakit/data.hpp"
#include "parakit/optim.hpp"
#include "parakit/pretrain.hpp"

using namespace parakit;
namespace fs = std::filesystem;

namespace {

const std::string kLexiconDir = std::string(PARAKIT_DATA_DIR) + "/lexicon";

struct Corpus {
  std::vector<ParaExample> examples;
  Vocab vocab;
};

Corpus make_corpus(int n_pairs, std::uint64_t seed) {
  auto lex = Lexicon::load(kLexiconDir);
  SynthSpec spec;
  spec.n_pairs = n_pairs;
  spec.seed = seed;
  Corpus out{synth_generate(lex, spec), Vocab()};
  std::vector<std::string> texts;
  for (const auto& ex : out.examples) {
    texts.push_back(ex.ref);
    texts.push_back(ex.cand);
  }
  out.vocab = Vocab::build(texts, 512);
  return out;
}

ModelConfig tiny_config(int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.max_len = 32;
  cfg.layers = 1;
  cfg.hidden = 32;
  cfg.heads = 2;
  cfg.ffn = 64;
  cfg.bottleneck = 8;
  cfg.dropout = 0.0f;
  cfg.seed = 11;
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fresh_dir(const std::string& leaf) {
  auto dir = fs::temp_directory_path() / "parakit_pretrain_test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::map<std::string, std::uint64_t> all_group_hashes(const ParaphraseModel<float>& model) {
  std::map<std::string, std::uint64_t> out;
  for (const char* g : {"trunk", "s2s", "mlm", "cls", "score"}) out[g] = group_hash(model, g);
  return out;
}

}  // namespace

TEST_CASE("config validation rejects unusable settings") {
  PretrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  auto expect_config_error = [](PretrainConfig bad) {
    try {
      bad.validate();
      FAIL("expected a configuration error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
    }
  };

  PretrainConfig none = cfg;
  none.enable_ar = none.enable_mlm = none.enable_cls = false;
  expect_config_error(none);
  PretrainConfig warm = cfg;
  warm.warmup_steps = warm.total_steps + 1;
  expect_config_error(warm);
  PretrainConfig mask = cfg;
  mask.mask_prob = 1.5;
  expect_config_error(mask);
  PretrainConfig batch = cfg;
  batch.batch_size = 0;
  expect_config_error(batch);
  PretrainConfig rate = cfg;
  rate.lr = 0.0;
  expect_config_error(rate);
  PretrainConfig weight = cfg;
  weight.alpha = -0.5;
  expect_config_error(weight);
}

TEST_CASE("full-scale reference recipe is recorded") {
  const auto& ref = full_scale_reference();
  CHECK(ref.at("alpha") == "2.0");
  CHECK(ref.at("beta") == "10.0");
  CHECK(ref.at("epochs") == "4");
  CHECK(ref.at("large.lr") == "1e-4");
  CHECK(ref.at("large.warmup_steps") == "2400");
  CHECK(ref.at("large.batch_size") == "32");
  CHECK(ref.at("large.updates") == "40000");
  CHECK(ref.at("base.lr") == "4e-4");
  CHECK(ref.at("base.warmup_steps") == "1200");
  CHECK(ref.at("base.updates") == "20000");
}

TEST_CASE("weighted total combines enabled terms only") {
  PretrainConfig cfg;  // alpha 2, beta 10
  CHECK(weighted_total(1.0, 0.5, 0.1, cfg) == doctest::Approx(3.0).epsilon(1e-12));

  PretrainConfig bare = cfg;
  bare.alpha = 0.0;
  bare.beta = 0.0;
  CHECK(weighted_total(1.25, 9.0, 9.0, bare) == doctest::Approx(1.25).epsilon(1e-12));

  PretrainConfig no_mlm = cfg;
  no_mlm.enable_mlm = false;
  CHECK(weighted_total(1.0, 123.0, 0.1, no_mlm) == doctest::Approx(2.0).epsilon(1e-12));
  PretrainConfig no_cls = cfg;
  no_cls.enable_cls = false;
  CHECK(weighted_total(1.0, 0.5, 123.0, no_cls) == doctest::Approx(2.0).epsilon(1e-12));
  PretrainConfig ar_off = cfg;
  ar_off.enable_ar = false;
  CHECK(weighted_total(123.0, 0.5, 0.1, ar_off) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("prepared examples wire specials, masking and truncation") {
  Vocab vocab = Vocab::build({"the farmer chased the wagon", "the wagon was chased"}, 64);
  SeededRng rng(5);

  ParaExample ex{"the farmer chased the wagon", "the wagon was chased", 1, "passive"};
  auto prep = prepare_example(ex, vocab, 32, 0.15, false, rng);
  auto ref_ids = vocab.encode_text(ex.ref);
  auto cand_ids = vocab.encode_text(ex.cand);

  CHECK(prep.src.front() == Vocab::kBos);
  CHECK(prep.src.back() == Vocab::kEos);
  CHECK(std::vector<int>(prep.src.begin() + 1, prep.src.end() - 1) == ref_ids);
  CHECK(prep.dec_in.front() == Vocab::kBos);
  CHECK(std::vector<int>(prep.dec_in.begin() + 1, prep.dec_in.end()) == cand_ids);
  auto targets_head = std::vector<int>(prep.targets.begin(), prep.targets.end() - 1);
  CHECK(targets_head == cand_ids);
  CHECK(prep.targets.back() == Vocab::kEos);
  CHECK(prep.dec_in.size() == prep.targets.size());
  CHECK(prep.label == 1);
  for (int l : prep.mlm_labels) CHECK(l == kIgnoreId);

  SUBCASE("empty candidate still predicts one end token") {
    ParaExample empty{"the farmer chased the wagon", "", -1, "identity"};
    auto p = prepare_example(empty, vocab, 32, 0.15, false, rng);
    CHECK(p.dec_in == std::vector<int>{Vocab::kBos});
    CHECK(p.targets == std::vector<int>{Vocab::kEos});
  }

  SUBCASE("long inputs respect the length budget") {
    std::string lots;
    for (int i = 0; i < 50; ++i) lots += "farmer wagon ";
    ParaExample big{lots, lots, -1, "identity"};
    auto p = prepare_example(big, vocab, 16, 0.15, false, rng);
    CHECK(p.src.size() <= 16);
    CHECK(p.dec_in.size() <= 16);
    CHECK(p.targets.size() == p.dec_in.size());
    CHECK(p.edit_pair.ids.size() <= 16);
  }

  SUBCASE("masking marks labels only at selected positions") {
    SeededRng mrng(9);
    auto p = prepare_example(ex, vocab, 32, 1.0, true, mrng);
    int selected = 0;
    for (std::size_t i = 0; i < p.mlm_labels.size(); ++i) {
      if (p.mlm_labels[i] == kIgnoreId) continue;
      ++selected;
      CHECK_FALSE(Vocab::is_special_id(p.mlm_labels[i]));
    }
    CHECK(selected > 0);
  }
}

TEST_CASE("untrained losses sit near the uniform-prediction baseline") {
  auto corpus = make_corpus(64, 21);
  const int v = corpus.vocab.size();
  ParaphraseModel<float> model(tiny_config(v));

  SeededRng mask_rng(3);
  std::vector<PreparedExample> batch;
  for (int i = 0; i < 16; ++i)
    batch.push_back(prepare_example(corpus.examples[i], corpus.vocab, 32, 0.3, true, mask_rng));

  PretrainConfig cfg;
  SeededRng rng(1);
  LossBreakdown bd;
  auto total = batch_loss(model, batch, cfg, false, rng, &bd);

  const double uniform = std::log(static_cast<double>(v));
  CHECK(bd.mlm_positions > 10);
  CHECK(bd.ar_tokens > 50);
  CHECK(bd.l_mlm == doctest::Approx(uniform).epsilon(0.05));
  CHECK(bd.l_ar == doctest::Approx(uniform).epsilon(0.05));
  CHECK(std::abs(static_cast<double>(total.item()) - bd.l_total) <=
        2e-6 * std::max(1.0, std::abs(bd.l_total)));

  SUBCASE("unmasked batch contributes no masked-token loss") {
    SeededRng r2(4);
    std::vector<PreparedExample> clean;
    for (int i = 0; i < 4; ++i)
      clean.push_back(prepare_example(corpus.examples[i], corpus.vocab, 32, 0.3, false, r2));
    LossBreakdown b2;
    batch_loss(model, clean, cfg, false, r2, &b2);
    CHECK(b2.l_mlm == 0.0);
    CHECK(b2.mlm_positions == 0);
  }

  SUBCASE("single end-token candidate scores exactly one prediction") {
    SeededRng r3(4);
    ParaExample ex{"the farmer chased the wagon", "", -1, "identity"};
    std::vector<PreparedExample> one{
        prepare_example(ex, corpus.vocab, 32, 0.0, false, r3)};
    LossBreakdown b3;
    batch_loss(model, one, cfg, false, r3, &b3);
    CHECK(b3.ar_tokens == 1);
  }
}

TEST_CASE("single masked position matches a direct cross-entropy") {
  Vocab vocab = Vocab::build({"the farmer chased the wagon", "the wagon was chased"}, 64);
  ParaphraseModel<float> model(tiny_config(vocab.size()));
  SeededRng rng(2);

  ParaExample ex{"the farmer chased the wagon", "the wagon was chased", -1, "passive"};
  auto prep = prepare_example(ex, vocab, 32, 0.0, false, rng);
  const int pos = 2;
  const int original = prep.edit_pair.ids[pos];
  REQUIRE_FALSE(Vocab::is_special_id(original));
  prep.edit_pair.ids[pos] = Vocab::kMask;
  prep.mlm_labels[pos] = original;

  PretrainConfig cfg;
  LossBreakdown bd;
  batch_loss(model, {prep}, cfg, false, rng, &bd);
  CHECK(bd.mlm_positions == 1);

  NoGradGuard guard;
  SeededRng replay(7);
  auto edit = model.edit_encode(prep.edit_pair, false, replay);
  auto logits = model.mlm_logits(edit.states);
  double maxv = -1e300;
  for (int j = 0; j < vocab.size(); ++j) maxv = std::max(maxv, (double)logits.at(pos, j));
  double lse = 0.0;
  for (int j = 0; j < vocab.size(); ++j) lse += std::exp((double)logits.at(pos, j) - maxv);
  const double oracle = maxv + std::log(lse) - (double)logits.at(pos, original);
  CHECK(bd.l_mlm == doctest::Approx(oracle).epsilon(1e-5));
}

TEST_CASE("entailment term averages the labeled subset") {
  auto corpus = make_corpus(32, 8);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
  SeededRng rng(6);

  std::vector<PreparedExample> batch;
  std::vector<int> labels = {1, 0, -1, 1, -1};
  for (int i = 0; i < 5; ++i) {
    auto prep = prepare_example(corpus.examples[i], corpus.vocab, 32, 0.0, false, rng);
    prep.label = labels[i];
    batch.push_back(prep);
  }

  PretrainConfig cfg;
  LossBreakdown bd;
  batch_loss(model, batch, cfg, false, rng, &bd);
  CHECK(bd.cls_examples == 3);

  NoGradGuard guard;
  SeededRng replay(9);
  double oracle = 0.0;
  for (const auto& prep : batch) {
    if (prep.label < 0) continue;
    auto edit = model.edit_encode(prep.edit_pair, false, replay);
    const double x = model.entail_logit(edit.z).item();
    oracle += std::max(x, 0.0) - x * prep.label + std::log1p(std::exp(-std::abs(x)));
  }
  oracle /= 3.0;
  CHECK(bd.l_cls == doctest::Approx(oracle).epsilon(1e-5));

  SUBCASE("unlabeled batch contributes nothing") {
    for (auto& prep : batch) prep.label = -1;
    LossBreakdown b2;
    batch_loss(model, batch, cfg, false, rng, &b2);
    CHECK(b2.l_cls == 0.0);
    CHECK(b2.cls_examples == 0);
  }

  SUBCASE("zeroed head gives the coin-flip loss") {
    for (auto& [name, tensor] : model.params()) {
      if (name.rfind("cls_head.", 0) == 0)
        std::fill(tensor.data().begin(), tensor.data().end(), 0.0f);
    }
    LossBreakdown b3;
    batch_loss(model, batch, cfg, false, rng, &b3);
    CHECK(b3.l_cls == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("training on a memorization set drives the loss down") {
  auto corpus = make_corpus(50, 13);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));

  const double before_eval = eval_ar(model, corpus.vocab, corpus.examples);
  const double uniform = std::log(static_cast<double>(corpus.vocab.size()));
  CHECK(before_eval == doctest::Approx(uniform).epsilon(0.05));

  PretrainConfig cfg;
  cfg.total_steps = 200;
  cfg.warmup_steps = 20;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  auto out = pretrain_run(model, corpus.vocab, corpus.examples, cfg, fresh_dir("memorize"));
  REQUIRE(out.log.size() == 200);

  auto mean_total = [&](int from, int count) {
    double s = 0.0;
    for (int i = from; i < from + count; ++i) s += out.log[i].l_total;
    return s / count;
  };
  auto mean_ar = [&](int from, int count) {
    double s = 0.0;
    for (int i = from; i < from + count; ++i) s += out.log[i].l_ar;
    return s / count;
  };
  CHECK(mean_total(180, 20) < 0.6 * mean_total(0, 20));
  CHECK(mean_ar(180, 20) < mean_ar(0, 20));

  const double after_eval = eval_ar(model, corpus.vocab, corpus.examples);
  CHECK(after_eval < before_eval);

  for (const auto& bd : out.log) {
    PretrainConfig defaults;
    CHECK(std::abs(bd.l_total - weighted_total(bd.l_ar, bd.l_mlm, bd.l_cls, defaults)) <= 1e-6);
  }
}

TEST_CASE("seed-fixed reruns are bit-identical") {
  auto corpus = make_corpus(24, 17);
  PretrainConfig cfg;
  cfg.total_steps = 20;
  cfg.warmup_steps = 5;
  cfg.seed = 42;

  ParaphraseModel<float> a(tiny_config(corpus.vocab.size()));
  auto dir_a = fresh_dir("det_a");
  auto run_a = pretrain_run(a, corpus.vocab, corpus.examples, cfg, dir_a);

  ParaphraseModel<float> b(tiny_config(corpus.vocab.size()));
  auto dir_b = fresh_dir("det_b");
  auto run_b = pretrain_run(b, corpus.vocab, corpus.examples, cfg, dir_b);

  REQUIRE(run_a.log.size() == run_b.log.size());
  for (std::size_t i = 0; i < run_a.log.size(); ++i) {
    CHECK(run_a.log[i].l_total == run_b.log[i].l_total);
    CHECK(run_a.log[i].l_ar == run_b.log[i].l_ar);
    CHECK(run_a.log[i].l_mlm == run_b.log[i].l_mlm);
    CHECK(run_a.log[i].l_cls == run_b.log[i].l_cls);
  }
  CHECK(read_file(run_a.loss_csv_path) == read_file(run_b.loss_csv_path));
  CHECK(read_file(dir_a + "/checkpoint_final.ckpt") == read_file(dir_b + "/checkpoint_final.ckpt"));

  PretrainConfig other = cfg;
  other.seed = 43;
  ParaphraseModel<float> c(tiny_config(corpus.vocab.size()));
  auto run_c = pretrain_run(c, corpus.vocab, corpus.examples, other, fresh_dir("det_c"));
  CHECK(read_file(run_a.loss_csv_path) != read_file(run_c.loss_csv_path));
}

TEST_CASE("learning rate follows the warmup-then-constant schedule") {
  auto corpus = make_corpus(16, 19);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
  PretrainConfig cfg;
  cfg.total_steps = 12;
  cfg.warmup_steps = 8;
  cfg.lr = 5e-4;
  auto out = pretrain_run(model, corpus.vocab, corpus.examples, cfg, fresh_dir("warmup"));
  REQUIRE(out.lr_log.size() == 12);
  for (int step = 1; step <= 12; ++step) {
    CHECK(out.lr_log[step - 1] == warmup_constant_lr(cfg.lr, cfg.warmup_steps, step));
  }
  CHECK(out.lr_log[7] == cfg.lr);
  CHECK(out.lr_log[11] == cfg.lr);
  CHECK(out.lr_log[0] == doctest::Approx(cfg.lr / 8.0).epsilon(1e-12));
}

TEST_CASE("checkpoint cadence writes loadable snapshots") {
  auto corpus = make_corpus(16, 23);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
  PretrainConfig cfg;
  cfg.total_steps = 10;
  cfg.warmup_steps = 2;
  cfg.checkpoint_every = 4;
  auto dir = fresh_dir("cadence");
  auto out = pretrain_run(model, corpus.vocab, corpus.examples, cfg, dir);

  REQUIRE(out.checkpoint_paths.size() == 3);
  CHECK(out.checkpoint_paths[0] == dir + "/checkpoint_step4.ckpt");
  CHECK(out.checkpoint_paths[1] == dir + "/checkpoint_step8.ckpt");
  CHECK(out.checkpoint_paths[2] == dir + "/checkpoint_final.ckpt");
  for (const auto& path : out.checkpoint_paths) {
    auto loaded = load_model(path);
    CHECK(loaded.vocab.tokens() == corpus.vocab.tokens());
    CHECK(loaded.model.config().hidden == 32);
  }

  SUBCASE("cadence landing on the last step is not duplicated") {
    ParaphraseModel<float> m2(tiny_config(corpus.vocab.size()));
    PretrainConfig c2 = cfg;
    c2.checkpoint_every = 5;
    auto o2 = pretrain_run(m2, corpus.vocab, corpus.examples, c2, fresh_dir("cadence2"));
    REQUIRE(o2.checkpoint_paths.size() == 2);
    CHECK(o2.checkpoint_paths[0].find("checkpoint_step5") != std::string::npos);
    CHECK(o2.checkpoint_paths[1].find("checkpoint_final") != std::string::npos);
  }
}

TEST_CASE("bad inputs abort with the right category") {
  auto corpus = make_corpus(8, 29);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
  PretrainConfig cfg;
  cfg.total_steps = 3;
  cfg.warmup_steps = 0;

  try {
    pretrain_run(model, corpus.vocab, {}, cfg, fresh_dir("empty"));
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }

  model.params()[0].second.data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    pretrain_run(model, corpus.vocab, corpus.examples, cfg, fresh_dir("nan"));
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("disabling a loss term leaves its head at initialization") {
  auto corpus = make_corpus(24, 31);

  auto run_with = [&](bool ar, bool mlm, bool cls, const std::string& leaf) {
    ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
    auto before = all_group_hashes(model);
    PretrainConfig cfg;
    cfg.total_steps = 25;
    cfg.warmup_steps = 5;
    cfg.lr = 1e-3;
    cfg.enable_ar = ar;
    cfg.enable_mlm = mlm;
    cfg.enable_cls = cls;
    pretrain_run(model, corpus.vocab, corpus.examples, cfg, fresh_dir(leaf));
    auto after = all_group_hashes(model);
    return std::make_pair(before, after);
  };

  SUBCASE("masked-token term off") {
    auto [before, after] = run_with(true, false, true, "ab_mlm");
    CHECK(after["mlm"] == before["mlm"]);
    CHECK(after["cls"] != before["cls"]);
    CHECK(after["s2s"] != before["s2s"]);
    CHECK(after["trunk"] != before["trunk"]);
    CHECK(after["score"] == before["score"]);
  }
  SUBCASE("entailment term off") {
    auto [before, after] = run_with(true, true, false, "ab_cls");
    CHECK(after["cls"] == before["cls"]);
    CHECK(after["mlm"] != before["mlm"]);
    CHECK(after["s2s"] != before["s2s"]);
    CHECK(after["score"] == before["score"]);
  }
  SUBCASE("decoder term off") {
    auto [before, after] = run_with(false, true, true, "ab_ar");
    CHECK(after["s2s"] == before["s2s"]);
    CHECK(after["mlm"] != before["mlm"]);
    CHECK(after["cls"] != before["cls"]);
    CHECK(after["trunk"] != before["trunk"]);
    CHECK(after["score"] == before["score"]);
  }
  SUBCASE("everything on still never touches the scoring head") {
    auto [before, after] = run_with(true, true, true, "ab_all");
    CHECK(after["trunk"] != before["trunk"]);
    CHECK(after["s2s"] != before["s2s"]);
    CHECK(after["mlm"] != before["mlm"]);
    CHECK(after["cls"] != before["cls"]);
    CHECK(after["score"] == before["score"]);
  }
}

TEST_CASE("loss log file matches the in-memory log") {
  auto corpus = make_corpus(12, 37);
  ParaphraseModel<float> model(tiny_config(corpus.vocab.size()));
  PretrainConfig cfg;
  cfg.total_steps = 6;
  cfg.warmup_steps = 2;
  auto dir = fresh_dir("csv");
  auto out = pretrain_run(model, corpus.vocab, corpus.examples, cfg, dir);

  std::ifstream in(out.loss_csv_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,l_ar,l_mlm,l_cls,l_total,lr");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 6);
    CHECK(std::stoi(fields[0]) == rows + 1);
    CHECK(std::stod(fields[4]) ==
          doctest::Approx(out.log[rows].l_total).epsilon(1e-9));
    CHECK(std::stod(fields[5]) == doctest::Approx(out.lr_log[rows]).epsilon(1e-9));
    ++rows;
  }
  CHECK(rows == 6);
}
