#pragma once

#include <string>
#include <utility>
#include <vector>

#include "parakit/data.hpp"
#include "parakit/model.hpp"
#include "parakit/text.hpp"

namespace parakit {

struct FinetuneConfig {
  int batch_size = 32;
  double lr = 1e-5;
  int total_steps = 2000;
  double validation_fraction = 0.10;
  int eval_every = 50;    // validation-curve cadence; step 0 and the last step always logged
  int freeze_layers = 0;  // freeze the embeddings and the lowest N edit layers
  double clip_norm = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Groups by the exact reference string and assigns whole groups to one side,
// so no reference ever straddles the split. Group order is seed-shuffled and
// groups join the validation side while that brings its size closer to the
// target fraction. Fewer than two distinct references cannot be split.
std::pair<std::vector<ScoredPair>, std::vector<ScoredPair>> split_by_reference(
    const std::vector<ScoredPair>& dataset, double fraction, std::uint64_t seed);

struct CurvePoint {
  int step = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_pearson = 0.0;  // NaN while predictions are still constant
};

struct FinetuneResult {
  std::vector<CurvePoint> curve;
  std::string checkpoint_path;
  std::string curve_csv_path;
  double score_mean = 0.0;
  double score_sd = 1.0;
};

// Regresses the scoring head against train scores standardized to zero mean
// and unit variance (constant scores keep sd 1, so predictions converge to
// the constant). Only the edit-encoder path is updated; the decoder stack is
// untouched and carried through to the saved checkpoint, which records
// score_mean/score_sd for de-standardized scoring.
FinetuneResult finetune_run(ParaphraseModel<float>& model, const Vocab& vocab,
                            const std::vector<ScoredPair>& train,
                            const std::vector<ScoredPair>& validation,
                            const FinetuneConfig& cfg, const std::string& out_dir);

// De-standardized quality score for one pair; higher means a better
// paraphrase under the training distribution.
double predict_score(const ParaphraseModel<float>& model, const Vocab& vocab,
                     const std::string& ref, const std::string& cand, double score_mean = 0.0,
                     double score_sd = 1.0);

// Loop over predict_score; bit-identical to scoring one pair at a time.
std::vector<double> predict_scores(const ParaphraseModel<float>& model, const Vocab& vocab,
                                   const std::vector<std::pair<std::string, std::string>>& pairs,
                                   double score_mean = 0.0, double score_sd = 1.0);

}  // namespace parakit
