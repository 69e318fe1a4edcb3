#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "parakit/rng.hpp"

namespace parakit {

struct ParaExample {
  std::string ref;
  std::string cand;
  int label = -1;  // 1 meaning-preserving, 0 not, -1 unlabeled
  std::string transform;
};

struct ScoredPair {
  std::string group;
  std::string ref;
  std::string cand;
  double score = 0.0;
};

struct Lexicon {
  std::vector<std::string> subjects;
  std::vector<std::pair<std::string, std::string>> verbs;  // base, past
  std::vector<std::string> objects;
  std::vector<std::string> modifiers;

  // Reads subjects.txt, verbs.txt, objects.txt, modifiers.txt from dir.
  static Lexicon load(const std::string& dir);
  std::vector<std::string> all_words() const;
};

inline const std::vector<std::string>& transform_names() {
  static const std::vector<std::string> names = {
      "identity",           "negation", "summary",  "passive",
      "conditional_perfect", "personal", "informal", "unrelated"};
  return names;
}

// Classifies a generated candidate by its surface markers; every transform
// leaves a distinct fingerprint, so generation can be audited independently
// of the sampling path that produced it.
std::string detect_transform(const std::vector<std::string>& ref_tokens,
                             const std::vector<std::string>& cand_tokens);

inline int transform_label(const std::string& transform) {
  return (transform == "negation" || transform == "unrelated") ? 0 : 1;
}

struct SynthSpec {
  int n_pairs = 1000;
  std::uint64_t seed = 1;
  double labeled_fraction = 1.0 / 3.0;
};

struct ScoredSpec {
  int n_pairs = 500;
  std::uint64_t seed = 1;
  int max_severity = 4;
  double noise_sd = 0.05;
};

std::vector<ParaExample> synth_generate(const Lexicon& lex, const SynthSpec& spec);

// Scored variant: candidates are corrupted at a sampled severity and scored
// 1 - 0.2*severity plus clipped gaussian noise; group is "synth-<transform>".
std::vector<ScoredPair> synth_generate_scored(const Lexicon& lex, const ScoredSpec& spec);

// Replaces ceil(0.2 * severity * len) distinct positions with words drawn
// from the pool. Severity ranges over 0..4.
std::vector<std::string> corrupt_tokens(const std::vector<std::string>& tokens, int severity,
                                        const std::vector<std::string>& pool, SeededRng& rng);

struct PairLoadResult {
  std::vector<ParaExample> examples;
  std::size_t malformed = 0;
};

// Tab-separated ref<TAB>cand[<TAB>label[<TAB>transform]]. Malformed lines are
// skipped and counted; more than 10% malformed is a format error.
PairLoadResult load_pairs_tsv(const std::string& path);
void save_pairs_tsv(const std::string& path, const std::vector<ParaExample>& examples);

// Tab-separated group<TAB>ref<TAB>cand<TAB>score. Any malformed line is a
// format error naming the line.
std::vector<ScoredPair> load_scored_tsv(const std::string& path);
void save_scored_tsv(const std::string& path, const std::vector<ScoredPair>& pairs);

}  // namespace parakit
