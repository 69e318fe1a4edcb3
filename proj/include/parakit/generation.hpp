#pragma once

#include <functional>
#include <string>
#include <vector>

#include "parakit/model.hpp"
#include "parakit/tensor.hpp"
#include "parakit/text.hpp"

namespace parakit {

struct BeamConfig {
  int beam = 4;
  int max_len = 32;
  double length_penalty = 0.6;
  int eos_id = Vocab::kEos;
};

struct BeamHypothesis {
  std::vector<int> ids;  // generated tokens, EOS included when reached
  double sum_logprob = 0.0;
  double score = 0.0;  // sum_logprob / len^penalty
};

// Log-probabilities over the whole vocabulary for the token that would follow
// `prefix`. The prefix never contains the leading BOS.
using BeamStepFn = std::function<std::vector<double>(const std::vector<int>&)>;

// Finished hypotheses, best first: higher normalized score wins, exact ties go
// to the lexicographically smaller id sequence (so a prefix beats its own
// extensions and lower token ids come first).
std::vector<BeamHypothesis> beam_search_all(const BeamStepFn& step, int vocab_size,
                                            const BeamConfig& cfg);
std::vector<int> beam_search(const BeamStepFn& step, int vocab_size, const BeamConfig& cfg);

// Decodes a candidate for `ref_ids` conditioned on the edit vector z [1 x M].
// The source runs through the encoder once; each step reuses the memory.
std::vector<BeamHypothesis> beam_search_hypotheses(const ParaphraseModel<float>& model,
                                                   const std::vector<int>& ref_ids, const Tensor& z,
                                                   const BeamConfig& cfg);
std::vector<int> beam_search(const ParaphraseModel<float>& model, const std::vector<int>& ref_ids,
                             const Tensor& z, const BeamConfig& cfg);

struct OneShotResult {
  std::string candidate;
  double entail_prob = 0.0;         // sigmoid of the demonstration pair's entailment logit
  std::vector<double> beam_scores;  // normalized, best first
  double leakage = 0.0;  // share of generated content tokens found only in the demo candidate
};

// Encodes the demonstration pair into z, decodes a candidate for new_ref
// conditioned on it, and audits word leakage from the demonstration.
OneShotResult one_shot(const ParaphraseModel<float>& model, const Vocab& vocab,
                       const std::string& demo_ref, const std::string& demo_cand,
                       const std::string& new_ref, const BeamConfig& cfg);

}  // namespace parakit
