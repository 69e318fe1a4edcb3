#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "parakit/errors.hpp"
#include "parakit/gradcheck.hpp"
#include "parakit/model.hpp"
#include "parakit/rng.hpp"
#include "parakit/text.hpp"

using namespace parakit;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = 40;
  cfg.max_len = 24;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 4;
  cfg.ffn = 32;
  cfg.bottleneck = 4;
  cfg.dropout = 0.0f;
  cfg.seed = 19;
  return cfg;
}

PackedPair demo_pair(int vocab_size) {
  std::vector<int> ref = {7, 8, 9, 10, 11};
  std::vector<int> cand = {7, 12, 9, 13};
  for (int id : ref) REQUIRE(id < vocab_size);
  return pack_pair(ref, cand, 20);
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  auto expect_config_error = [](ModelConfig bad) {
    try {
      ParaphraseModel<float> model(bad);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
    }
  };
  ModelConfig bad = cfg;
  bad.vocab_size = 6;
  expect_config_error(bad);
  bad = cfg;
  bad.hidden = 30;
  bad.heads = 4;
  expect_config_error(bad);
  bad = cfg;
  bad.layers = 0;
  expect_config_error(bad);
  bad = cfg;
  bad.dropout = 1.0f;
  expect_config_error(bad);
  bad = cfg;
  bad.max_len = 2;
  expect_config_error(bad);
}

TEST_CASE("model config map round trip") {
  ModelConfig cfg = small_config();
  cfg.use_conditioning = false;
  cfg.dropout = 0.25f;
  ModelConfig back = ModelConfig::from_map(cfg.to_map());
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.max_len == cfg.max_len);
  CHECK(back.layers == cfg.layers);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.heads == cfg.heads);
  CHECK(back.ffn == cfg.ffn);
  CHECK(back.bottleneck == cfg.bottleneck);
  CHECK(back.dropout == doctest::Approx(cfg.dropout));
  CHECK(back.use_conditioning == cfg.use_conditioning);
  CHECK(back.seed == cfg.seed);
  auto broken = cfg.to_map();
  broken.erase("layers");
  CHECK_THROWS_AS(ModelConfig::from_map(broken), Error);
  broken = cfg.to_map();
  broken["hidden"] = "16x";
  CHECK_THROWS_AS(ModelConfig::from_map(broken), Error);
}

TEST_CASE("parameter registry layout and groups") {
  for (int layers : {1, 2}) {
    ModelConfig cfg = small_config();
    cfg.layers = layers;
    ParaphraseModel<float> model(cfg);
    CHECK(model.params().size() == static_cast<size_t>(58 * layers + 25));
    std::map<std::string, int> group_counts;
    std::set<std::string> names;
    for (const auto& [name, tensor] : model.params()) {
      CHECK(names.insert(name).second);
      ++group_counts[param_group(name)];
    }
    CHECK(group_counts["trunk"] == 16 * layers + 9);
    CHECK(group_counts["s2s"] == 42 * layers + 7);
    CHECK(group_counts["mlm"] == 5);
    CHECK(group_counts["cls"] == 2);
    CHECK(group_counts["score"] == 2);
  }
  ParaphraseModel<float> model(small_config());
  auto shape_of = [&](const char* name) { return model.param(name).shape(); };
  CHECK(shape_of("embed.token") == std::vector<int>{40, 16});
  CHECK(shape_of("embed.pos") == std::vector<int>{24, 16});
  CHECK(shape_of("bottleneck.a1_w") == std::vector<int>{16, 4});
  CHECK(shape_of("bottleneck.a2_w") == std::vector<int>{4, 4});
  CHECK(shape_of("cond.w") == std::vector<int>{4, 16});
  CHECK(shape_of("cls_head.w") == std::vector<int>{4, 1});
  CHECK(shape_of("mlm_head.logit_bias") == std::vector<int>{40});
  CHECK_THROWS_AS(model.param("nope"), Error);
}

TEST_CASE("initialization is seeded and scaled") {
  ModelConfig cfg = small_config();
  cfg.vocab_size = 200;
  cfg.hidden = 64;
  cfg.heads = 4;
  ParaphraseModel<float> a(cfg);
  ParaphraseModel<float> b(cfg);
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].second.data() == b.params()[i].second.data());
  }
  ModelConfig other = cfg;
  other.seed = 20;
  ParaphraseModel<float> c(other);
  CHECK(a.param("embed.token").data() != c.param("embed.token").data());

  const auto& tok_data = a.param("embed.token").data();
  double mean = 0.0;
  for (float v : tok_data) mean += v;
  mean /= static_cast<double>(tok_data.size());
  double var = 0.0;
  for (float v : tok_data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(tok_data.size());
  CHECK(std::fabs(mean) < 0.002);
  CHECK(std::sqrt(var) > 0.019);
  CHECK(std::sqrt(var) < 0.021);
  for (float v : a.param("edit.layer0.ln1.gain").data()) CHECK(v == 1.0f);
  for (float v : a.param("edit.layer0.attn.bq").data()) CHECK(v == 0.0f);
}

TEST_CASE("edit encoding shapes and attention rows") {
  ModelConfig cfg = small_config();
  ParaphraseModel<float> model(cfg);
  PackedPair pair = demo_pair(cfg.vocab_size);
  SeededRng rng(1);
  NoGradGuard eval;
  std::vector<BasicTensor<float>> attn;
  auto out = model.edit_encode(pair, false, rng, &attn);
  const int n = static_cast<int>(pair.ids.size());
  CHECK(out.states.shape() == std::vector<int>{n, 16});
  CHECK(out.z.shape() == std::vector<int>{1, 4});
  REQUIRE(attn.size() == static_cast<size_t>(cfg.layers * cfg.heads));
  for (const auto& probs : attn) {
    REQUIRE(probs.shape() == std::vector<int>{n, n});
    for (int r = 0; r < n; ++r) {
      double sum = 0.0;
      for (int c = 0; c < n; ++c) sum += probs.at(r, c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  CHECK(model.mlm_logits(out.states).shape() == std::vector<int>{n, 40});
  CHECK(model.entail_logit(out.z).shape() == std::vector<int>{1, 1});
  CHECK(model.score_value(out.z).shape() == std::vector<int>{1, 1});
}

TEST_CASE("evaluation is deterministic and dropout perturbs training") {
  ModelConfig cfg = small_config();
  cfg.dropout = 0.5f;
  ParaphraseModel<float> model(cfg);
  PackedPair pair = demo_pair(cfg.vocab_size);
  {
    NoGradGuard eval;
    SeededRng r1(1), r2(2);
    auto a = model.edit_encode(pair, false, r1);
    auto b = model.edit_encode(pair, false, r2);
    CHECK(a.z.data() == b.z.data());
  }
  SeededRng r1(1), r2(2);
  auto a = model.edit_encode(pair, true, r1);
  auto b = model.edit_encode(pair, true, r2);
  CHECK(a.z.data() != b.z.data());
}

TEST_CASE("conditioning slot changes memory and logits") {
  ModelConfig cfg = small_config();
  ParaphraseModel<float> model(cfg);
  std::vector<int> src = {Vocab::kBos, 7, 8, 9, Vocab::kEos};
  std::vector<int> dec_in = {Vocab::kBos, 10, 11};
  SeededRng rng(1);
  NoGradGuard eval;
  auto z1 = BasicTensor<float>::filled({1, 4}, 0.0f);
  auto z2 = BasicTensor<float>::filled({1, 4}, 1.0f);
  auto mem1 = model.encode_memory(src, &z1, false, rng);
  CHECK(mem1.rows() == static_cast<int>(src.size()) + 1);
  auto unconditioned = model.encode_memory(src, nullptr, false, rng);
  CHECK(unconditioned.rows() == static_cast<int>(src.size()));
  auto logits1 = model.decode_logits(mem1, dec_in, false, rng);
  CHECK(logits1.shape() == std::vector<int>{static_cast<int>(dec_in.size()), 40});
  auto mem2 = model.encode_memory(src, &z2, false, rng);
  auto logits2 = model.decode_logits(mem2, dec_in, false, rng);
  CHECK(logits1.data() != logits2.data());

  ModelConfig ablated = cfg;
  ablated.use_conditioning = false;
  ParaphraseModel<float> plain(ablated);
  auto pm1 = plain.encode_memory(src, &z1, false, rng);
  auto pm2 = plain.encode_memory(src, &z2, false, rng);
  CHECK(pm1.rows() == static_cast<int>(src.size()));
  CHECK(pm1.data() == pm2.data());
}

TEST_CASE("decoder respects causal masking") {
  ModelConfig cfg = small_config();
  ParaphraseModel<float> model(cfg);
  std::vector<int> src = {Vocab::kBos, 7, 8, Vocab::kEos};
  SeededRng rng(1);
  NoGradGuard eval;
  auto z = BasicTensor<float>::filled({1, 4}, 0.25f);
  auto memory = model.encode_memory(src, &z, false, rng);
  std::vector<int> in1 = {Vocab::kBos, 10, 11, 12};
  std::vector<int> in2 = {Vocab::kBos, 10, 13, 14};
  auto l1 = model.decode_logits(memory, in1, false, rng);
  auto l2 = model.decode_logits(memory, in2, false, rng);
  for (int pos = 0; pos < 2; ++pos) {
    for (int vcol = 0; vcol < 40; ++vcol) {
      CHECK(l1.at(pos, vcol) == l2.at(pos, vcol));
    }
  }
  bool later_differs = false;
  for (int vcol = 0; vcol < 40; ++vcol) later_differs |= l1.at(2, vcol) != l2.at(2, vcol);
  CHECK(later_differs);
}

TEST_CASE("full loss path passes finite-difference gradient check") {
  ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.max_len = 12;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.bottleneck = 4;
  cfg.dropout = 0.0f;
  cfg.seed = 23;
  ParaphraseModel<double> model(cfg);

  PackedPair pair = pack_pair({6, 7, 8}, {6, 9, 8}, 10);
  SeededRng mask_rng(4);
  MaskedBatch masked = apply_mlm_mask(pair, cfg.vocab_size, 0.6, mask_rng);
  PackedPair masked_pair = pair;
  masked_pair.ids = masked.input_ids;
  std::vector<int> src = {Vocab::kBos, 6, 7, 8, Vocab::kEos};
  std::vector<int> dec_in = {Vocab::kBos, 6, 9, 8};
  std::vector<int> targets = {6, 9, 8, Vocab::kEos};

  auto loss_fn = [&]() {
    SeededRng rng(1);
    auto edit = model.edit_encode(masked_pair, true, rng);
    auto l_mlm = cross_entropy_logits(model.mlm_logits(edit.states), masked.labels);
    auto l_cls = binary_cross_entropy_logit(model.entail_logit(edit.z), 1);
    auto logits = model.seq2seq_logits(src, dec_in, &edit.z, true, rng);
    auto l_ar = cross_entropy_logits(logits, targets);
    return add(add(l_ar, scale(l_mlm, 2.0)), scale(l_cls, 10.0));
  };

  GradCheckOptions opt;
  opt.step = 1e-4;
  opt.max_entries_per_param = 4;
  opt.sample_seed = 99;
  auto report = grad_check<double>(loss_fn, model.params(), 1e-3, opt);
  INFO("max rel err ", report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("model checkpoint round trip preserves everything") {
  Vocab vocab = Vocab::build({"the farmer chased the wagon", "the baker held the drum",
                              "we found the bright lantern"},
                             64);
  ModelConfig cfg = small_config();
  cfg.vocab_size = vocab.size();
  ParaphraseModel<float> model(cfg);
  auto dir = fs::temp_directory_path() / "parakit_model_test";
  fs::create_directories(dir);
  auto path = (dir / "model.ckpt").string();
  save_model(path, model, vocab, {{"score_mean", "0.5"}, {"score_sd", "0.1"}});

  auto loaded = load_model(path);
  CHECK(loaded.model.config().vocab_size == cfg.vocab_size);
  CHECK(loaded.model.config().layers == cfg.layers);
  CHECK(loaded.vocab.tokens() == vocab.tokens());
  CHECK(loaded.extra.at("score_mean") == "0.5");
  CHECK(loaded.extra.at("score_sd") == "0.1");
  REQUIRE(loaded.model.params().size() == model.params().size());
  for (size_t i = 0; i < model.params().size(); ++i) {
    CHECK(loaded.model.params()[i].first == model.params()[i].first);
    CHECK(loaded.model.params()[i].second.data() == model.params()[i].second.data());
  }
  PackedPair pair = demo_pair(cfg.vocab_size);
  SeededRng rng(1);
  NoGradGuard eval;
  auto a = model.edit_encode(pair, false, rng);
  auto b = loaded.model.edit_encode(pair, false, rng);
  CHECK(a.z.data() == b.z.data());
}

TEST_CASE("model checkpoint rejects mismatched parameter sets") {
  Vocab vocab = Vocab::build({"alpha beta gamma delta"}, 32);
  ModelConfig cfg = small_config();
  cfg.vocab_size = vocab.size();
  cfg.layers = 1;
  ParaphraseModel<float> model(cfg);
  auto dir = fs::temp_directory_path() / "parakit_model_test";
  fs::create_directories(dir);

  ModelConfig bigger = cfg;
  bigger.layers = 2;
  auto config = bigger.to_map();
  config["vocab"] = vocab.joined();
  auto missing = (dir / "missing.ckpt").string();
  save_checkpoint(missing, config, model.params());
  try {
    load_model(missing);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }

  auto config_ok = cfg.to_map();
  config_ok["vocab"] = vocab.joined();
  auto params = model.params();
  params.emplace_back("bogus.extra", BasicTensor<float>::filled({1, 2}, 0.0f));
  auto extra = (dir / "extra.ckpt").string();
  save_checkpoint(extra, config_ok, params);
  try {
    load_model(extra);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }

  ModelConfig wrong_vocab = cfg;
  wrong_vocab.vocab_size = vocab.size() + 1;
  auto config_bad_v = wrong_vocab.to_map();
  config_bad_v["vocab"] = vocab.joined();
  auto badv = (dir / "badv.ckpt").string();
  save_checkpoint(badv, config_bad_v, model.params());
  try {
    load_model(badv);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }
}

TEST_CASE("group hashes isolate head parameters") {
  ModelConfig cfg = small_config();
  ParaphraseModel<float> model(cfg);
  auto mlm_before = group_hash(model, "mlm");
  auto cls_before = group_hash(model, "cls");
  auto trunk_before = group_hash(model, "trunk");
  model.param("cls_head.w").data()[0] += 0.5f;
  CHECK(group_hash(model, "cls") != cls_before);
  CHECK(group_hash(model, "mlm") == mlm_before);
  CHECK(group_hash(model, "trunk") == trunk_before);
  CHECK_THROWS_AS(group_hash(model, "nonsense"), Error);
}
