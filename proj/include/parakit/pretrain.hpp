#pragma once

#include <map>
#include <string>
#include <vector>

#include "parakit/data.hpp"
#include "parakit/model.hpp"
#include "parakit/text.hpp"

namespace parakit {

struct PretrainConfig {
  double alpha = 2.0;  // weight on the masked-token loss
  double beta = 10.0;  // weight on the entailment loss
  bool enable_ar = true;
  bool enable_mlm = true;
  bool enable_cls = true;
  double mask_prob = 0.15;
  int batch_size = 16;
  double lr = 3e-4;
  int warmup_steps = 100;
  int total_steps = 2000;
  double clip_norm = 1.0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 1;

  void validate() const;
};

// Published recipe for the full-size models this desk setup scales down.
// Recorded verbatim so manifests and docs can cite the target configuration.
const std::map<std::string, std::string>& full_scale_reference();

struct LossBreakdown {
  double l_ar = 0.0;
  double l_mlm = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  long long ar_tokens = 0;
  long long mlm_positions = 0;
  long long cls_examples = 0;
};

// Weighted sum over the enabled terms; a disabled term contributes zero.
double weighted_total(double l_ar, double l_mlm, double l_cls, const PretrainConfig& cfg);

// One corpus example lowered to model inputs. The packed pair drives the edit
// encoder and the masked-token labels; src/dec_in/targets drive the decoder.
struct PreparedExample {
  PackedPair edit_pair;
  std::vector<int> mlm_labels;  // aligned with edit_pair.ids, kIgnoreId where unselected
  std::vector<int> src;         // BOS, ref ids, EOS
  std::vector<int> dec_in;      // BOS, cand ids
  std::vector<int> targets;     // cand ids, EOS
  int label = -1;
};

// Masking draws come from mask_rng; pass mask_inputs=false to feed the clean
// pair (used at eval time and when the masked-token term is disabled).
PreparedExample prepare_example(const ParaExample& ex, const Vocab& vocab, int max_len,
                                double mask_prob, bool mask_inputs, SeededRng& mask_rng);

// Single shared forward pass per example: the masked pair feeds the edit
// encoder, whose states serve the masked-token head and whose z conditions
// the decoder. Token-level terms are pooled per token across the batch, the
// entailment term per labeled example. Returns the differentiable total and
// fills breakdown (l_total recomputed in double from the logged parts).
BasicTensor<float> batch_loss(const ParaphraseModel<float>& model,
                              const std::vector<PreparedExample>& batch,
                              const PretrainConfig& cfg, bool training, SeededRng& rng,
                              LossBreakdown* breakdown);

// Per-token decoder cross-entropy over a held-out set, clean inputs, no
// dropout, no graph.
double eval_ar(const ParaphraseModel<float>& model, const Vocab& vocab,
               const std::vector<ParaExample>& examples);

struct PretrainResult {
  std::vector<LossBreakdown> log;  // one entry per step
  std::vector<double> lr_log;
  std::vector<std::string> checkpoint_paths;  // cadence checkpoints, final one last
  std::string loss_csv_path;
};

// Seed-deterministic loop: epoch-shuffled batches, linear warmup then constant
// rate, global-norm clipping, per-step CSV logging, checkpoints at the
// configured cadence plus a final one. A non-finite loss aborts with the step
// index; an empty corpus is a configuration error.
PretrainResult pretrain_run(ParaphraseModel<float>& model, const Vocab& vocab,
                            const std::vector<ParaExample>& corpus, const PretrainConfig& cfg,
                            const std::string& out_dir);

}  // namespace parakit
