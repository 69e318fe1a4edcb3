#include "parakit/generation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "parakit/errors.hpp"

namespace parakit {
namespace {

double normalized_score(double sum_logprob, std::size_t len, double penalty) {
  return sum_logprob / std::pow(static_cast<double>(len), penalty);
}

bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ids < b.ids;
}

// Function words of the synthetic grammar; the leakage audit only counts
// content tokens.
const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "the", "a",    "an",  "was",   "by",   "we",  "they",
      "some", "like", "not", "would", "have", "had", "of"};
  return words;
}

}  // namespace

std::vector<BeamHypothesis> beam_search_all(const BeamStepFn& step, int vocab_size,
                                            const BeamConfig& cfg) {
  if (cfg.beam < 1) fail_config("beam_search: beam width must be at least 1");
  if (cfg.max_len < 2) fail_config("beam_search: max length must be at least 2");
  if (vocab_size < 1) fail_config("beam_search: vocabulary is empty");
  if (cfg.eos_id < 0 || cfg.eos_id >= vocab_size)
    fail_config("beam_search: EOS id outside the vocabulary");

  struct Partial {
    std::vector<int> ids;
    double sum_logprob = 0.0;
  };
  struct Candidate {
    std::vector<int> ids;
    double sum_logprob = 0.0;
  };

  std::vector<Partial> beams{{}};
  std::vector<BeamHypothesis> finished;

  for (int t = 0; t < cfg.max_len && !beams.empty(); ++t) {
    std::vector<Candidate> cands;
    cands.reserve(beams.size() * static_cast<std::size_t>(vocab_size));
    for (const auto& b : beams) {
      std::vector<double> logp = step(b.ids);
      if (static_cast<int>(logp.size()) != vocab_size)
        fail_contract("beam_search: step function returned " + std::to_string(logp.size()) +
                      " log-probabilities for a vocabulary of " + std::to_string(vocab_size));
      for (int v = 0; v < vocab_size; ++v) {
        Candidate c;
        c.ids = b.ids;
        c.ids.push_back(v);
        c.sum_logprob = b.sum_logprob + logp[v];
        cands.push_back(std::move(c));
      }
    }
    // Higher joint log-probability first; exact ties go to the smaller
    // sequence, which is what makes beam 1 reduce to greedy argmax with
    // lowest-id tie-breaking.
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(cfg.beam));
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.sum_logprob != b.sum_logprob) return a.sum_logprob > b.sum_logprob;
                        return a.ids < b.ids;
                      });
    std::vector<Partial> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      Candidate& c = cands[i];
      if (c.ids.back() == cfg.eos_id) {
        BeamHypothesis h;
        h.sum_logprob = c.sum_logprob;
        h.score = normalized_score(c.sum_logprob, c.ids.size(), cfg.length_penalty);
        h.ids = std::move(c.ids);
        finished.push_back(std::move(h));
      } else {
        next.push_back({std::move(c.ids), c.sum_logprob});
      }
    }
    beams = std::move(next);
  }

  // Hypotheses still alive at the length cap count as terminated there.
  for (auto& b : beams) {
    BeamHypothesis h;
    h.sum_logprob = b.sum_logprob;
    h.score = normalized_score(b.sum_logprob, b.ids.size(), cfg.length_penalty);
    h.ids = std::move(b.ids);
    finished.push_back(std::move(h));
  }

  std::sort(finished.begin(), finished.end(), better);
  return finished;
}

std::vector<int> beam_search(const BeamStepFn& step, int vocab_size, const BeamConfig& cfg) {
  return beam_search_all(step, vocab_size, cfg).front().ids;
}

std::vector<BeamHypothesis> beam_search_hypotheses(const ParaphraseModel<float>& model,
                                                   const std::vector<int>& ref_ids, const Tensor& z,
                                                   const BeamConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (static_cast<int>(z.data().size()) != mc.bottleneck)
    fail_contract("beam_search: conditioning vector has length " +
                  std::to_string(z.data().size()) + ", the model expects " +
                  std::to_string(mc.bottleneck));
  NoGradGuard no_grad;
  SeededRng rng(0);

  std::vector<int> src;
  const std::size_t ref_keep = std::min(ref_ids.size(), static_cast<std::size_t>(mc.max_len - 2));
  src.reserve(ref_keep + 2);
  src.push_back(Vocab::kBos);
  src.insert(src.end(), ref_ids.begin(), ref_ids.begin() + ref_keep);
  src.push_back(Vocab::kEos);
  Tensor memory = model.encode_memory(src, &z, false, rng);

  BeamConfig local = cfg;
  local.max_len = std::min(cfg.max_len, mc.max_len - 1);
  const int v = mc.vocab_size;
  auto step = [&](const std::vector<int>& prefix) {
    std::vector<int> dec_in;
    dec_in.reserve(prefix.size() + 1);
    dec_in.push_back(Vocab::kBos);
    dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
    Tensor logits = model.decode_logits(memory, dec_in, false, rng);
    const float* last = logits.data().data() + static_cast<std::size_t>(logits.rows() - 1) * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v; ++i) mx = std::max(mx, static_cast<double>(last[i]));
    double lse = 0.0;
    for (int i = 0; i < v; ++i) lse += std::exp(static_cast<double>(last[i]) - mx);
    lse = mx + std::log(lse);
    std::vector<double> out(v);
    for (int i = 0; i < v; ++i) out[i] = static_cast<double>(last[i]) - lse;
    return out;
  };
  return beam_search_all(step, v, local);
}

std::vector<int> beam_search(const ParaphraseModel<float>& model, const std::vector<int>& ref_ids,
                             const Tensor& z, const BeamConfig& cfg) {
  return beam_search_hypotheses(model, ref_ids, z, cfg).front().ids;
}

OneShotResult one_shot(const ParaphraseModel<float>& model, const Vocab& vocab,
                       const std::string& demo_ref, const std::string& demo_cand,
                       const std::string& new_ref, const BeamConfig& cfg) {
  NoGradGuard no_grad;
  SeededRng rng(0);
  PackedPair demo =
      pack_pair(vocab.encode_text(demo_ref), vocab.encode_text(demo_cand), model.config().max_len);
  auto edit = model.edit_encode(demo, false, rng);

  OneShotResult out;
  const float logit = model.entail_logit(edit.z).data()[0];
  out.entail_prob = 1.0 / (1.0 + std::exp(-static_cast<double>(logit)));

  auto hyps = beam_search_hypotheses(model, vocab.encode_text(new_ref), edit.z, cfg);
  const std::size_t n_scores = std::min(hyps.size(), static_cast<std::size_t>(cfg.beam));
  out.beam_scores.reserve(n_scores);
  for (std::size_t i = 0; i < n_scores; ++i) out.beam_scores.push_back(hyps[i].score);

  std::string text;
  for (int id : hyps.front().ids) {
    if (Vocab::is_special_id(id)) continue;
    if (!text.empty()) text += ' ';
    text += vocab.decode(id);
  }
  out.candidate = std::move(text);

  std::unordered_set<std::string> demo_words, ref_words;
  for (const auto& w : tokenize(demo_cand)) demo_words.insert(w);
  for (const auto& w : tokenize(new_ref)) ref_words.insert(w);
  int content = 0, leaked = 0;
  for (const auto& w : tokenize(out.candidate)) {
    if (stopwords().count(w) > 0) continue;
    ++content;
    if (demo_words.count(w) > 0 && ref_words.count(w) == 0) ++leaked;
  }
  out.leakage = content == 0 ? 0.0 : static_cast<double>(leaked) / content;
  return out;
}

}  // namespace parakit
