#pragma once

#include <map>
#include <string>
#include <vector>

namespace parakit {

struct MetricValue {
  std::string name;
  double value = 0.0;
  std::map<std::string, double> components;
};

// Corpus-level BLEU-4: clipped modified n-gram precisions pooled over the
// corpus, uniform-weight geometric mean over the n with any candidate
// n-grams, times the brevity penalty.
MetricValue bleu_corpus(const std::vector<std::vector<std::string>>& refs,
                        const std::vector<std::vector<std::string>>& cands);
MetricValue bleu_corpus_text(const std::vector<std::string>& refs,
                             const std::vector<std::string>& cands);

// Sentence-level variant: add-one smoothing on the n >= 2 counts.
MetricValue bleu_sentence(const std::vector<std::string>& ref,
                          const std::vector<std::string>& cand);

// Translation edit rate: (substitutions + insertions + deletions + block
// shifts) / reference length. Shifts are found greedily, capped at 50 rounds;
// a block may move only if it exactly matches some reference span.
MetricValue ter(const std::vector<std::string>& ref, const std::vector<std::string>& cand);

// LCS F1.
MetricValue rouge_l(const std::vector<std::string>& ref, const std::vector<std::string>& cand);

// Exact-match unigram alignment chosen to maximize matches and then minimize
// chunks; F_mean = 10PR/(R+9P), penalty = 0.5*(chunks/matches)^3.
MetricValue meteor_lite(const std::vector<std::string>& ref,
                        const std::vector<std::string>& cand);

// chrF++: character n-grams (n <= 6) over the lowercased, whitespace-stripped
// strings plus word n-grams (n <= 2), averaged precisions/recalls, F with
// beta = 2.
MetricValue chrf_pp(const std::string& ref_text, const std::string& cand_text);

const std::vector<std::string>& metric_names();

// Per-pair dispatch by metric name on raw texts (BLEU uses the smoothed
// sentence variant). Unknown names raise a config error.
MetricValue score_pair(const std::string& metric, const std::string& ref_text,
                       const std::string& cand_text);

}  // namespace parakit
