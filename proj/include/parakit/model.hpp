#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "parakit/checkpoint.hpp"
#include "parakit/errors.hpp"
#include "parakit/ops.hpp"
#include "parakit/rng.hpp"
#include "parakit/tensor.hpp"
#include "parakit/text.hpp"

namespace parakit {

struct ModelConfig {
  int vocab_size = 0;
  int max_len = 64;
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ffn = 128;
  int bottleneck = 8;
  float dropout = 0.1f;
  bool use_conditioning = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size <= static_cast<int>(Vocab::kNumSpecials)) {
      fail_config("vocab_size must exceed the special-token count");
    }
    if (max_len < 3) fail_config("max_len must be at least 3");
    if (layers < 1) fail_config("layers must be positive");
    if (hidden < 1 || heads < 1 || hidden % heads != 0) {
      fail_config("hidden must be a positive multiple of heads");
    }
    if (ffn < 1) fail_config("ffn must be positive");
    if (bottleneck < 1) fail_config("bottleneck must be positive");
    if (!(dropout >= 0.0f) || dropout >= 1.0f) fail_config("dropout must lie in [0, 1)");
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["vocab_size"] = std::to_string(vocab_size);
    m["max_len"] = std::to_string(max_len);
    m["layers"] = std::to_string(layers);
    m["hidden"] = std::to_string(hidden);
    m["heads"] = std::to_string(heads);
    m["ffn"] = std::to_string(ffn);
    m["bottleneck"] = std::to_string(bottleneck);
    m["dropout"] = std::to_string(dropout);
    m["use_conditioning"] = use_conditioning ? "1" : "0";
    m["seed"] = std::to_string(seed);
    return m;
  }

  static ModelConfig from_map(const std::map<std::string, std::string>& m) {
    ModelConfig cfg;
    auto need = [&](const char* key) -> const std::string& {
      auto it = m.find(key);
      if (it == m.end()) fail_format(std::string("checkpoint config missing '") + key + "'");
      return it->second;
    };
    auto to_int = [&](const char* key) {
      const std::string& v = need(key);
      try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
      } catch (const std::exception&) {
        fail_format(std::string("bad integer for '") + key + "': '" + v + "'");
      }
    };
    cfg.vocab_size = to_int("vocab_size");
    cfg.max_len = to_int("max_len");
    cfg.layers = to_int("layers");
    cfg.hidden = to_int("hidden");
    cfg.heads = to_int("heads");
    cfg.ffn = to_int("ffn");
    cfg.bottleneck = to_int("bottleneck");
    try {
      cfg.dropout = std::stof(need("dropout"));
    } catch (const std::exception&) {
      fail_format("bad float for 'dropout'");
    }
    cfg.use_conditioning = need("use_conditioning") == "1";
    try {
      cfg.seed = std::stoull(need("seed"));
    } catch (const std::exception&) {
      fail_format("bad integer for 'seed'");
    }
    cfg.validate();
    return cfg;
  }

  static const std::vector<std::string>& map_keys() {
    static const std::vector<std::string> keys = {
        "vocab_size", "max_len", "layers", "hidden",          "heads",
        "ffn",        "bottleneck", "dropout", "use_conditioning", "seed"};
    return keys;
  }
};

// Parameter groups keyed by name prefix. Heads own only parameters that no
// other objective touches, so a disabled loss term provably leaves its group
// untouched.
inline std::string param_group(const std::string& name) {
  auto has_prefix = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (has_prefix("mlm_head.")) return "mlm";
  if (has_prefix("cls_head.")) return "cls";
  if (has_prefix("score_head.")) return "score";
  if (has_prefix("s2s.") || has_prefix("cond.")) return "s2s";
  return "trunk";
}

template <typename T>
class ParaphraseModel {
 public:
  using Tensor = BasicTensor<T>;
  using Params = std::vector<std::pair<std::string, Tensor>>;

  explicit ParaphraseModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    SeededRng rng(cfg_.seed);
    const int h = cfg_.hidden;
    const int v = cfg_.vocab_size;
    const int m = cfg_.bottleneck;

    add_weight("embed.token", v, h, rng);
    add_weight("embed.pos", cfg_.max_len, h, rng);
    add_weight("embed.seg", 2, h, rng);
    add_encoder_stack("edit", rng);
    add_weight("bottleneck.a1_w", h, m, rng);
    add_bias_param("bottleneck.a1_b", m);
    add_weight("bottleneck.a2_w", m, m, rng);
    add_bias_param("bottleneck.a2_b", m);
    add_weight("cond.w", m, h, rng);
    add_bias_param("cond.b", h);
    add_encoder_stack("s2s.enc", rng);
    for (int i = 0; i < cfg_.layers; ++i) {
      std::string base = "s2s.dec.layer" + std::to_string(i);
      add_ln(base + ".ln1", h);
      add_attn_block(base + ".self", rng);
      add_ln(base + ".ln2", h);
      add_attn_block(base + ".cross", rng);
      add_ln(base + ".ln3", h);
      add_ffn_block(base + ".ffn", rng);
    }
    add_ln("s2s.dec.final_ln", h);
    add_bias_param("s2s.logit_bias", v);
    add_weight("mlm_head.dense_w", h, h, rng);
    add_bias_param("mlm_head.dense_b", h);
    add_ln("mlm_head.ln", h);
    add_bias_param("mlm_head.logit_bias", v);
    add_weight("cls_head.w", m, 1, rng);
    add_bias_param("cls_head.b", 1);
    add_weight("score_head.w", m, 1, rng);
    add_bias_param("score_head.b", 1);

    for (size_t i = 0; i < params_.size(); ++i) {
      if (!index_.emplace(params_[i].first, i).second) {
        fail_contract("duplicate parameter name " + params_[i].first);
      }
    }
  }

  ParaphraseModel(const ParaphraseModel&) = delete;
  ParaphraseModel& operator=(const ParaphraseModel&) = delete;
  ParaphraseModel(ParaphraseModel&&) noexcept = default;
  ParaphraseModel& operator=(ParaphraseModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  Tensor param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail_contract("no parameter named " + name);
    return params_[it->second].second;
  }

  struct EditOut {
    Tensor states;  // [n x hidden]
    Tensor z;       // [1 x bottleneck]
  };

  EditOut edit_encode(const PackedPair& pair, bool training, SeededRng& rng,
                      std::vector<Tensor>* attn_sink = nullptr) const {
    if (pair.ids.empty()) fail_contract("edit_encode: empty input");
    Tensor x = embed_tokens(pair.ids, &pair.segments);
    x = run_encoder_stack("edit", x, training, rng, attn_sink);
    EditOut out;
    out.states = x;
    Tensor pooled = row(x, 0);
    Tensor a1 = affine(pooled, param("bottleneck.a1_w"), param("bottleneck.a1_b"));
    out.z = affine(gelu(a1), param("bottleneck.a2_w"), param("bottleneck.a2_b"));
    return out;
  }

  Tensor mlm_logits(const Tensor& states) const {
    Tensor d = affine(states, param("mlm_head.dense_w"), param("mlm_head.dense_b"));
    Tensor n = layer_norm(gelu(d), param("mlm_head.ln.gain"), param("mlm_head.ln.bias"));
    return add_bias(matmul_nt(n, param("embed.token")), param("mlm_head.logit_bias"));
  }

  Tensor entail_logit(const Tensor& z) const {
    return affine(z, param("cls_head.w"), param("cls_head.b"));
  }

  Tensor score_value(const Tensor& z) const {
    return affine(z, param("score_head.w"), param("score_head.b"));
  }

  // Encoder output with the conditioning vector prepended as an extra memory
  // row when enabled and provided.
  Tensor encode_memory(const std::vector<int>& src_ids, const Tensor* z, bool training,
                       SeededRng& rng) const {
    if (src_ids.empty()) fail_contract("encode_memory: empty source");
    Tensor x = embed_tokens(src_ids, nullptr);
    x = run_encoder_stack("s2s.enc", x, training, rng, nullptr);
    if (cfg_.use_conditioning && z != nullptr) {
      Tensor cond = affine(*z, param("cond.w"), param("cond.b"));
      return concat_rows(cond, x);
    }
    return x;
  }

  // Next-token logits for every position of the decoder input.
  Tensor decode_logits(const Tensor& memory, const std::vector<int>& cand_input, bool training,
                       SeededRng& rng) const {
    if (cand_input.empty()) fail_contract("decode_logits: empty decoder input");
    const int n = static_cast<int>(cand_input.size());
    Tensor x = embed_tokens(cand_input, nullptr);
    Tensor causal = causal_mask(n);
    for (int i = 0; i < cfg_.layers; ++i) {
      std::string base = "s2s.dec.layer" + std::to_string(i);
      Tensor normed = layer_norm(x, param(base + ".ln1.gain"), param(base + ".ln1.bias"));
      Tensor self_out = attention(base + ".self", normed, normed, &causal, nullptr);
      x = add(x, maybe_dropout(self_out, training, rng));
      normed = layer_norm(x, param(base + ".ln2.gain"), param(base + ".ln2.bias"));
      Tensor cross_out = attention(base + ".cross", normed, memory, nullptr, nullptr);
      x = add(x, maybe_dropout(cross_out, training, rng));
      normed = layer_norm(x, param(base + ".ln3.gain"), param(base + ".ln3.bias"));
      x = add(x, maybe_dropout(ffn_block(base + ".ffn", normed), training, rng));
    }
    x = layer_norm(x, param("s2s.dec.final_ln.gain"), param("s2s.dec.final_ln.bias"));
    return add_bias(matmul_nt(x, param("embed.token")), param("s2s.logit_bias"));
  }

  Tensor seq2seq_logits(const std::vector<int>& src_ids, const std::vector<int>& cand_input,
                        const Tensor* z, bool training, SeededRng& rng) const {
    Tensor memory = encode_memory(src_ids, z, training, rng);
    return decode_logits(memory, cand_input, training, rng);
  }

 private:
  void add_param(const std::string& name, int rows, int cols, std::vector<T> data) {
    Tensor t = Tensor::from_data({rows, cols}, std::move(data), true);
    params_.emplace_back(name, t);
  }

  void add_weight(const std::string& name, int rows, int cols, SeededRng& rng) {
    std::vector<T> data(static_cast<size_t>(rows) * static_cast<size_t>(cols));
    for (auto& v : data) v = static_cast<T>(rng.normal() * 0.02);
    add_param(name, rows, cols, std::move(data));
  }

  void add_vector_param(const std::string& name, int cols, T value) {
    Tensor t = Tensor::from_data({cols}, std::vector<T>(static_cast<size_t>(cols), value), true);
    params_.emplace_back(name, t);
  }

  void add_bias_param(const std::string& name, int cols) { add_vector_param(name, cols, T(0)); }

  void add_ln(const std::string& base, int h) {
    add_vector_param(base + ".gain", h, T(1));
    add_vector_param(base + ".bias", h, T(0));
  }

  void add_attn_block(const std::string& base, SeededRng& rng) {
    const int h = cfg_.hidden;
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add_weight(base + w, h, h, rng);
    for (const char* b : {".bq", ".bk", ".bv", ".bo"}) add_bias_param(base + b, h);
  }

  void add_ffn_block(const std::string& base, SeededRng& rng) {
    add_weight(base + ".w1", cfg_.hidden, cfg_.ffn, rng);
    add_bias_param(base + ".b1", cfg_.ffn);
    add_weight(base + ".w2", cfg_.ffn, cfg_.hidden, rng);
    add_bias_param(base + ".b2", cfg_.hidden);
  }

  void add_encoder_stack(const std::string& stack, SeededRng& rng) {
    for (int i = 0; i < cfg_.layers; ++i) {
      std::string base = stack + ".layer" + std::to_string(i);
      add_ln(base + ".ln1", cfg_.hidden);
      add_attn_block(base + ".attn", rng);
      add_ln(base + ".ln2", cfg_.hidden);
      add_ffn_block(base + ".ffn", rng);
    }
    add_ln(stack + ".final_ln", cfg_.hidden);
  }

  Tensor embed_tokens(const std::vector<int>& ids, const std::vector<int>* segments) const {
    if (static_cast<int>(ids.size()) > cfg_.max_len) {
      fail_contract("sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                    std::to_string(cfg_.max_len));
    }
    std::vector<int> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    Tensor x = add(embedding(param("embed.token"), ids), embedding(param("embed.pos"), positions));
    if (segments != nullptr) {
      if (segments->size() != ids.size()) fail_contract("segment/id length mismatch");
      x = add(x, embedding(param("embed.seg"), *segments));
    }
    return x;
  }

  Tensor causal_mask(int n) const {
    std::vector<T> data(static_cast<size_t>(n) * static_cast<size_t>(n), T(0));
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        data[static_cast<size_t>(i) * n + j] = T(-1e9);
      }
    }
    return Tensor::from_data({n, n}, std::move(data), false);
  }

  Tensor maybe_dropout(const Tensor& x, bool training, SeededRng& rng) const {
    if (!training || cfg_.dropout <= 0.0f) return x;
    return dropout(x, static_cast<double>(cfg_.dropout), rng, true);
  }

  Tensor attention(const std::string& base, const Tensor& x_q, const Tensor& x_kv,
                   const Tensor* mask, std::vector<Tensor>* attn_sink) const {
    const int dh = cfg_.hidden / cfg_.heads;
    Tensor q = affine(x_q, param(base + ".wq"), param(base + ".bq"));
    Tensor k = affine(x_kv, param(base + ".wk"), param(base + ".bk"));
    Tensor v = affine(x_kv, param(base + ".wv"), param(base + ".bv"));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(cfg_.heads));
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int h = 0; h < cfg_.heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
      if (mask != nullptr) scores = add(scores, *mask);
      Tensor probs = softmax_rows(scores);
      if (attn_sink != nullptr) attn_sink->push_back(probs);
      heads.push_back(matmul(probs, vh));
    }
    return affine(concat_cols(heads), param(base + ".wo"), param(base + ".bo"));
  }

  Tensor ffn_block(const std::string& base, const Tensor& x) const {
    Tensor inner = gelu(affine(x, param(base + ".w1"), param(base + ".b1")));
    return affine(inner, param(base + ".w2"), param(base + ".b2"));
  }

  Tensor run_encoder_stack(const std::string& stack, Tensor x, bool training, SeededRng& rng,
                           std::vector<Tensor>* attn_sink) const {
    for (int i = 0; i < cfg_.layers; ++i) {
      std::string base = stack + ".layer" + std::to_string(i);
      Tensor normed = layer_norm(x, param(base + ".ln1.gain"), param(base + ".ln1.bias"));
      Tensor attn_out = attention(base + ".attn", normed, normed, nullptr, attn_sink);
      x = add(x, maybe_dropout(attn_out, training, rng));
      normed = layer_norm(x, param(base + ".ln2.gain"), param(base + ".ln2.bias"));
      x = add(x, maybe_dropout(ffn_block(base + ".ffn", normed), training, rng));
    }
    return layer_norm(x, param(stack + ".final_ln.gain"), param(stack + ".final_ln.bias"));
  }

  ModelConfig cfg_;
  Params params_;
  std::unordered_map<std::string, size_t> index_;
};

inline std::uint64_t group_hash(const ParaphraseModel<float>& model, const std::string& group) {
  std::uint64_t h = 1469598103934665603ull;
  bool any = false;
  for (const auto& [name, tensor] : model.params()) {
    if (param_group(name) != group) continue;
    any = true;
    h ^= hash_floats(tensor.data());
    h *= 1099511628211ull;
  }
  if (!any) fail_contract("no parameters in group '" + group + "'");
  return h;
}

inline void save_model(const std::string& path, const ParaphraseModel<float>& model,
                       const Vocab& vocab,
                       const std::map<std::string, std::string>& extra = {}) {
  if (vocab.size() != model.config().vocab_size) {
    fail_contract("vocab size does not match model config");
  }
  auto config = model.config().to_map();
  config["vocab"] = vocab.joined();
  for (const auto& [k, v] : extra) {
    if (config.count(k)) fail_contract("extra checkpoint key '" + k + "' collides");
    config[k] = v;
  }
  save_checkpoint(path, config, model.params());
}

struct LoadedModel {
  ParaphraseModel<float> model;
  Vocab vocab;
  std::map<std::string, std::string> extra;
};

inline LoadedModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  ModelConfig cfg = ModelConfig::from_map(ckpt.config);
  auto vocab_it = ckpt.config.find("vocab");
  if (vocab_it == ckpt.config.end()) fail_format("checkpoint config missing 'vocab'");
  Vocab vocab = Vocab::from_joined(vocab_it->second);
  if (vocab.size() != cfg.vocab_size) {
    fail_format("checkpoint vocab has " + std::to_string(vocab.size()) +
                " tokens but config says " + std::to_string(cfg.vocab_size));
  }
  LoadedModel out{ParaphraseModel<float>(cfg), std::move(vocab), {}};
  for (const auto& [k, v] : ckpt.config) {
    bool known = k == "vocab";
    for (const auto& key : ModelConfig::map_keys()) known = known || k == key;
    if (!known) out.extra[k] = v;
  }
  std::map<std::string, const LoadedParam*> by_name;
  for (const auto& p : ckpt.params) by_name[p.name] = &p;
  for (auto& [name, tensor] : out.model.params()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail_format("checkpoint missing parameter '" + name + "'");
    const LoadedParam& src = *it->second;
    if (src.shape != tensor.shape()) {
      fail_format("checkpoint parameter '" + name + "' has wrong shape");
    }
    std::copy(src.data.begin(), src.data.end(), tensor.data().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    fail_format("checkpoint has unknown parameter '" + by_name.begin()->first + "'");
  }
  return out;
}

}  // namespace parakit
