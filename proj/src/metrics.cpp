#include "parakit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "parakit/errors.hpp"
#include "parakit/text.hpp"

namespace parakit {
namespace {

using Tokens = std::vector<std::string>;

std::string join_gram(const Tokens& toks, size_t start, size_t n) {
  std::string key;
  for (size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

std::unordered_map<std::string, int> ngram_counts(const Tokens& toks, size_t n) {
  std::unordered_map<std::string, int> counts;
  if (toks.size() >= n) {
    for (size_t i = 0; i + n <= toks.size(); ++i) ++counts[join_gram(toks, i, n)];
  }
  return counts;
}

struct BleuTallies {
  std::array<long long, 4> matches{};
  std::array<long long, 4> totals{};
  long long ref_len = 0;
  long long cand_len = 0;
};

void tally_pair(const Tokens& ref, const Tokens& cand, BleuTallies& t) {
  t.ref_len += static_cast<long long>(ref.size());
  t.cand_len += static_cast<long long>(cand.size());
  for (size_t n = 1; n <= 4; ++n) {
    if (cand.size() < n) continue;
    auto ref_counts = ngram_counts(ref, n);
    auto cand_counts = ngram_counts(cand, n);
    long long total = 0;
    long long matched = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    t.totals[n - 1] += total;
    t.matches[n - 1] += matched;
  }
}

MetricValue finish_bleu(const BleuTallies& t, bool smooth) {
  MetricValue out;
  out.name = "bleu";
  out.components["ref_len"] = static_cast<double>(t.ref_len);
  out.components["cand_len"] = static_cast<double>(t.cand_len);
  double log_sum = 0.0;
  int levels = 0;
  bool zero_precision = false;
  for (int n = 0; n < 4; ++n) {
    if (t.totals[n] == 0) {
      out.components["p" + std::to_string(n + 1)] = 0.0;
      continue;
    }
    double num = static_cast<double>(t.matches[n]);
    double den = static_cast<double>(t.totals[n]);
    if (smooth && n >= 1) {
      num += 1.0;
      den += 1.0;
    }
    double p = num / den;
    out.components["p" + std::to_string(n + 1)] = p;
    ++levels;
    if (p <= 0.0) {
      zero_precision = true;
    } else {
      log_sum += std::log(p);
    }
  }
  double bp = 1.0;
  if (t.cand_len == 0) {
    out.components["bp"] = 0.0;
    out.value = 0.0;
    return out;
  }
  if (t.cand_len < t.ref_len) {
    bp = std::exp(1.0 - static_cast<double>(t.ref_len) / static_cast<double>(t.cand_len));
  }
  out.components["bp"] = bp;
  if (levels == 0 || zero_precision) {
    out.value = 0.0;
  } else {
    out.value = bp * std::exp(log_sum / levels);
  }
  return out;
}

int levenshtein(const Tokens& a, const Tokens& b) {
  const size_t n = a.size();
  const size_t m = b.size();
  std::vector<int> prev(m + 1);
  std::vector<int> cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

bool spans_match(const Tokens& hay, size_t start, const Tokens& block) {
  for (size_t i = 0; i < block.size(); ++i) {
    if (hay[start + i] != block[i]) return false;
  }
  return true;
}

bool block_occurs_in(const Tokens& ref, const Tokens& block) {
  if (block.size() > ref.size()) return false;
  for (size_t j = 0; j + block.size() <= ref.size(); ++j) {
    if (spans_match(ref, j, block)) return true;
  }
  return false;
}

Tokens apply_shift(const Tokens& seq, size_t start, size_t len, size_t dest) {
  Tokens rest;
  rest.reserve(seq.size() - len);
  rest.insert(rest.end(), seq.begin(), seq.begin() + start);
  rest.insert(rest.end(), seq.begin() + start + len, seq.end());
  Tokens out;
  out.reserve(seq.size());
  out.insert(out.end(), rest.begin(), rest.begin() + dest);
  out.insert(out.end(), seq.begin() + start, seq.begin() + start + len);
  out.insert(out.end(), rest.begin() + dest, rest.end());
  return out;
}

}  // namespace

MetricValue bleu_corpus(const std::vector<Tokens>& refs, const std::vector<Tokens>& cands) {
  if (refs.size() != cands.size()) {
    fail_contract("bleu_corpus: got " + std::to_string(refs.size()) + " references vs " +
                  std::to_string(cands.size()) + " candidates");
  }
  if (refs.empty()) fail_contract("bleu_corpus: empty corpus");
  BleuTallies t;
  for (size_t i = 0; i < refs.size(); ++i) tally_pair(refs[i], cands[i], t);
  return finish_bleu(t, /*smooth=*/false);
}

MetricValue bleu_corpus_text(const std::vector<std::string>& refs,
                             const std::vector<std::string>& cands) {
  std::vector<Tokens> r;
  std::vector<Tokens> c;
  r.reserve(refs.size());
  c.reserve(cands.size());
  for (const auto& s : refs) r.push_back(tokenize(s));
  for (const auto& s : cands) c.push_back(tokenize(s));
  return bleu_corpus(r, c);
}

MetricValue bleu_sentence(const Tokens& ref, const Tokens& cand) {
  BleuTallies t;
  tally_pair(ref, cand, t);
  return finish_bleu(t, /*smooth=*/true);
}

MetricValue ter(const Tokens& ref, const Tokens& cand) {
  if (ref.empty()) fail_contract("ter: empty reference");
  MetricValue out;
  out.name = "ter";
  Tokens current = cand;
  int shifts = 0;
  int dist = levenshtein(current, ref);
  for (int round = 0; round < 50 && dist > 0 && !current.empty(); ++round) {
    int best_dist = dist;
    Tokens best_seq;
    for (size_t len = 1; len <= current.size(); ++len) {
      for (size_t start = 0; start + len <= current.size(); ++start) {
        Tokens block(current.begin() + start, current.begin() + start + len);
        if (!block_occurs_in(ref, block)) continue;
        for (size_t dest = 0; dest + len <= current.size(); ++dest) {
          if (dest == start) continue;
          Tokens moved = apply_shift(current, start, len, dest);
          if (moved == current) continue;
          int d = levenshtein(moved, ref);
          if (d < best_dist) {
            best_dist = d;
            best_seq = std::move(moved);
          }
        }
      }
    }
    // Accept any strict reduction in remaining edit distance. A gain-one
    // shift is net neutral on its own but can unlock a better follow-up.
    if (best_dist >= dist) break;
    current = std::move(best_seq);
    dist = best_dist;
    ++shifts;
  }
  double edits = static_cast<double>(shifts + dist);
  out.components["shifts"] = static_cast<double>(shifts);
  out.components["levenshtein"] = static_cast<double>(dist);
  out.components["edits"] = edits;
  out.components["ref_len"] = static_cast<double>(ref.size());
  out.value = edits / static_cast<double>(ref.size());
  return out;
}

MetricValue rouge_l(const Tokens& ref, const Tokens& cand) {
  MetricValue out;
  out.name = "rouge_l";
  if (ref.empty() || cand.empty()) {
    out.components["empty"] = 1.0;
    out.value = 0.0;
    return out;
  }
  out.components["empty"] = 0.0;
  const size_t n = ref.size();
  const size_t m = cand.size();
  std::vector<int> prev(m + 1, 0);
  std::vector<int> cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (ref[i - 1] == cand[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  double lcs = static_cast<double>(prev[m]);
  double p = lcs / static_cast<double>(m);
  double r = lcs / static_cast<double>(n);
  out.components["lcs"] = lcs;
  out.components["precision"] = p;
  out.components["recall"] = r;
  out.value = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
  return out;
}

namespace {

struct MeteorSearch {
  // For each matched type: positions in ref and cand plus how many pairs the
  // alignment must use.
  struct TypeSlots {
    std::vector<int> ref_pos;
    std::vector<int> cand_pos;
    int need = 0;
  };

  std::vector<int> cand_type;  // per cand position, index into types (or -1)
  std::vector<TypeSlots> types;
  std::vector<int> remaining;        // pairs still to place per type
  std::vector<std::vector<char>> ref_used;
  int best_chunks = 1 << 20;
  long long nodes = 0;
  bool capped = false;
  static constexpr long long kNodeBudget = 500000;

  void dfs(size_t cand_idx, int placed, int total, int chunks, int last_cand, int last_ref) {
    if (++nodes > kNodeBudget) {
      capped = true;
      return;
    }
    if (chunks >= best_chunks) return;
    if (placed == total) {
      best_chunks = chunks;
      return;
    }
    if (cand_idx >= cand_type.size()) return;
    int t = cand_type[cand_idx];
    bool may_skip = true;
    if (t >= 0 && remaining[t] > 0) {
      // Skipping is only allowed if enough later occurrences of this type
      // remain to satisfy the quota.
      int later = 0;
      for (size_t j = cand_idx + 1; j < cand_type.size(); ++j) {
        if (cand_type[j] == t) ++later;
      }
      may_skip = later >= remaining[t];
      auto& slots = types[t];
      for (size_t k = 0; k < slots.ref_pos.size(); ++k) {
        if (ref_used[t][k]) continue;
        int rp = slots.ref_pos[k];
        bool adjacent = placed > 0 && static_cast<int>(cand_idx) == last_cand + 1 &&
                        rp == last_ref + 1;
        ref_used[t][k] = 1;
        --remaining[t];
        dfs(cand_idx + 1, placed + 1, total, chunks + (adjacent ? 0 : 1),
            static_cast<int>(cand_idx), rp);
        ++remaining[t];
        ref_used[t][k] = 0;
        if (capped) return;
      }
    }
    if (may_skip) dfs(cand_idx + 1, placed, total, chunks, last_cand, last_ref);
  }
};

}  // namespace

MetricValue meteor_lite(const Tokens& ref, const Tokens& cand) {
  MetricValue out;
  out.name = "meteor";
  if (ref.empty() || cand.empty()) {
    out.components["empty"] = 1.0;
    out.value = 0.0;
    return out;
  }
  out.components["empty"] = 0.0;
  std::unordered_map<std::string, int> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  std::unordered_map<std::string, int> cand_counts;
  for (const auto& t : cand) ++cand_counts[t];

  MeteorSearch search;
  std::unordered_map<std::string, int> type_index;
  int matches = 0;
  for (const auto& [tok, c_count] : cand_counts) {
    auto it = ref_counts.find(tok);
    if (it == ref_counts.end()) continue;
    MeteorSearch::TypeSlots slots;
    slots.need = std::min(c_count, it->second);
    matches += slots.need;
    type_index[tok] = static_cast<int>(search.types.size());
    search.types.push_back(std::move(slots));
  }
  out.components["matches"] = static_cast<double>(matches);
  if (matches == 0) {
    out.value = 0.0;
    return out;
  }
  for (size_t i = 0; i < ref.size(); ++i) {
    auto it = type_index.find(ref[i]);
    if (it != type_index.end()) search.types[it->second].ref_pos.push_back(static_cast<int>(i));
  }
  search.cand_type.assign(cand.size(), -1);
  for (size_t i = 0; i < cand.size(); ++i) {
    auto it = type_index.find(cand[i]);
    if (it != type_index.end()) {
      search.cand_type[i] = it->second;
      search.types[it->second].cand_pos.push_back(static_cast<int>(i));
    }
  }
  search.remaining.reserve(search.types.size());
  for (auto& t : search.types) {
    search.remaining.push_back(t.need);
    search.ref_used.emplace_back(t.ref_pos.size(), 0);
  }
  search.dfs(0, 0, matches, 0, -2, -2);
  int chunks = search.best_chunks;
  if (search.capped) {
    // Fall back to a left-to-right greedy alignment that prefers extending
    // the current chunk.
    out.components["search_capped"] = 1.0;
    chunks = 0;
    int last_ref = -2;
    int prev_cand = -2;
    std::vector<std::vector<char>> used;
    std::vector<int> quota;
    for (auto& t : search.types) {
      used.emplace_back(t.ref_pos.size(), 0);
      quota.push_back(t.need);
    }
    for (size_t i = 0; i < cand.size(); ++i) {
      int t = search.cand_type[i];
      if (t < 0 || quota[t] == 0) continue;
      auto& slots = search.types[t];
      int pick = -1;
      for (size_t k = 0; k < slots.ref_pos.size(); ++k) {
        if (used[t][k]) continue;
        if (slots.ref_pos[k] == last_ref + 1) {
          pick = static_cast<int>(k);
          break;
        }
        if (pick < 0) pick = static_cast<int>(k);
      }
      bool adjacent = static_cast<int>(i) == prev_cand + 1 && slots.ref_pos[pick] == last_ref + 1;
      if (!adjacent) ++chunks;
      used[t][pick] = 1;
      --quota[t];
      last_ref = slots.ref_pos[pick];
      prev_cand = static_cast<int>(i);
    }
  }
  double m = static_cast<double>(matches);
  double p = m / static_cast<double>(cand.size());
  double r = m / static_cast<double>(ref.size());
  double f = 10.0 * p * r / (r + 9.0 * p);
  double frag = static_cast<double>(chunks) / m;
  double penalty = 0.5 * frag * frag * frag;
  out.components["chunks"] = static_cast<double>(chunks);
  out.components["precision"] = p;
  out.components["recall"] = r;
  out.components["f_mean"] = f;
  out.components["penalty"] = penalty;
  out.value = f * (1.0 - penalty);
  return out;
}

namespace {

std::string squeezed_lower(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    if (c <= 0x20) continue;
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::unordered_map<std::string, int> char_ngrams(const std::string& s, size_t n) {
  std::unordered_map<std::string, int> counts;
  if (s.size() >= n) {
    for (size_t i = 0; i + n <= s.size(); ++i) ++counts[s.substr(i, n)];
  }
  return counts;
}

struct LevelStats {
  long long matched = 0;
  long long total_ref = 0;
  long long total_cand = 0;
};

LevelStats level_from(const std::unordered_map<std::string, int>& ref,
                      const std::unordered_map<std::string, int>& cand) {
  LevelStats stats;
  for (const auto& [g, c] : ref) stats.total_ref += c;
  for (const auto& [g, c] : cand) {
    stats.total_cand += c;
    auto it = ref.find(g);
    if (it != ref.end()) stats.matched += std::min(c, it->second);
  }
  return stats;
}

}  // namespace

MetricValue chrf_pp(const std::string& ref_text, const std::string& cand_text) {
  MetricValue out;
  out.name = "chrf";
  std::vector<LevelStats> levels;
  std::string ref_chars = squeezed_lower(ref_text);
  std::string cand_chars = squeezed_lower(cand_text);
  for (size_t n = 1; n <= 6; ++n) {
    levels.push_back(level_from(char_ngrams(ref_chars, n), char_ngrams(cand_chars, n)));
  }
  Tokens ref_toks = tokenize(ref_text);
  Tokens cand_toks = tokenize(cand_text);
  for (size_t n = 1; n <= 2; ++n) {
    levels.push_back(level_from(ngram_counts(ref_toks, n), ngram_counts(cand_toks, n)));
  }
  double sum_p = 0.0;
  double sum_r = 0.0;
  int included = 0;
  for (const auto& lv : levels) {
    if (lv.total_ref == 0 && lv.total_cand == 0) continue;
    ++included;
    if (lv.total_cand > 0) sum_p += static_cast<double>(lv.matched) / static_cast<double>(lv.total_cand);
    if (lv.total_ref > 0) sum_r += static_cast<double>(lv.matched) / static_cast<double>(lv.total_ref);
  }
  out.components["levels"] = static_cast<double>(included);
  if (included == 0) {
    out.value = 0.0;
    return out;
  }
  double p = sum_p / included;
  double r = sum_r / included;
  out.components["precision"] = p;
  out.components["recall"] = r;
  const double beta2 = 4.0;
  double denom = beta2 * p + r;
  out.value = denom > 0.0 ? (1.0 + beta2) * p * r / denom : 0.0;
  return out;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"bleu", "ter", "rouge_l", "meteor", "chrf"};
  return names;
}

MetricValue score_pair(const std::string& metric, const std::string& ref_text,
                       const std::string& cand_text) {
  if (metric == "chrf") return chrf_pp(ref_text, cand_text);
  Tokens ref = tokenize(ref_text);
  Tokens cand = tokenize(cand_text);
  if (metric == "bleu") return bleu_sentence(ref, cand);
  if (metric == "ter") return ter(ref, cand);
  if (metric == "rouge_l") return rouge_l(ref, cand);
  if (metric == "meteor") return meteor_lite(ref, cand);
  fail_config("unknown metric '" + metric + "'");
}

}  // namespace parakit
