#include "parakit/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "parakit/errors.hpp"
#include "parakit/ops.hpp"

namespace parakit {

namespace {

inline bool is_space_byte(unsigned char c) { return c <= 0x20; }

inline bool is_word_byte(unsigned char c) {
  if (c >= 0x80) return true;  // UTF-8 continuation/lead bytes stay in words
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline char lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (is_space_byte(c)) {
      flush();
    } else if (is_word_byte(c)) {
      cur.push_back(lower_ascii(ch));
    } else {
      flush();
      out.emplace_back(1, ch);  // punctuation stands alone
    }
  }
  flush();
  return out;
}

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials{"<pad>", "<bos>", "<eos>",
                                                 "<sep>", "<mask>", "<unk>"};
  return specials;
}

Vocab::Vocab() {
  id_to_tok_ = special_tokens();
  for (int i = 0; i < kNumSpecials; ++i) tok_to_id_[id_to_tok_[i]] = i;
}

Vocab Vocab::from_counts(const std::vector<std::pair<std::string, long long>>& counts,
                         int max_size) {
  if (max_size < kNumSpecials + 1)
    fail_config("vocab build: max_size " + std::to_string(max_size) +
                " leaves no room beyond the " + std::to_string(kNumSpecials) + " specials");
  auto ordered = counts;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, cnt] : ordered) {
    if (v.size() >= max_size) break;
    if (tok.empty() || v.tok_to_id_.count(tok)) continue;
    v.tok_to_id_[tok] = v.size();
    v.id_to_tok_.push_back(tok);
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::string>& texts, int max_size) {
  std::map<std::string, long long> counter;
  for (const auto& t : texts)
    for (auto& tok : tokenize(t)) ++counter[tok];
  std::vector<std::pair<std::string, long long>> counts(counter.begin(), counter.end());
  return from_counts(counts, max_size);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
  if (static_cast<int>(id_to_token.size()) < kNumSpecials)
    fail_format("vocab: fewer entries than the " + std::to_string(kNumSpecials) + " specials");
  for (int i = 0; i < kNumSpecials; ++i)
    if (id_to_token[i] != special_tokens()[i])
      fail_format("vocab: entry " + std::to_string(i) + " is '" + id_to_token[i] +
                  "', expected '" + special_tokens()[i] + "'");
  Vocab v;
  v.id_to_tok_ = id_to_token;
  v.tok_to_id_.clear();
  for (int i = 0; i < static_cast<int>(id_to_token.size()); ++i) {
    if (id_to_token[i].empty()) fail_format("vocab: empty token at id " + std::to_string(i));
    if (!v.tok_to_id_.emplace(id_to_token[i], i).second)
      fail_format("vocab: duplicate token '" + id_to_token[i] + "'");
  }
  return v;
}

int Vocab::encode(const std::string& token) const {
  auto it = tok_to_id_.find(token);
  return it == tok_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= size())
    fail_contract("vocab decode: id " + std::to_string(id) + " outside [0," +
                  std::to_string(size()) + ")");
  return id_to_tok_[id];
}

std::vector<int> Vocab::encode_all(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(encode(t));
  return ids;
}

std::vector<int> Vocab::encode_text(const std::string& text) const {
  return encode_all(tokenize(text));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io("vocab save: cannot open '" + path + "'");
  for (const auto& t : id_to_tok_) out << t << "\n";
  out.flush();
  if (!out) fail_io("vocab save: write to '" + path + "' failed");
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("vocab load: cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return from_tokens(lines);
}

std::string Vocab::joined(char sep) const {
  std::string out;
  for (std::size_t i = 0; i < id_to_tok_.size(); ++i) {
    if (i) out.push_back(sep);
    out += id_to_tok_[i];
  }
  return out;
}

Vocab Vocab::from_joined(const std::string& s, char sep) {
  std::vector<std::string> toks;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      toks.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  toks.push_back(cur);
  return from_tokens(toks);
}

PackedPair pack_pair(const std::vector<int>& ref_ids, const std::vector<int>& cand_ids,
                     int max_len) {
  if (max_len < 3)
    fail_contract("pack_pair: max_len " + std::to_string(max_len) +
                  " cannot hold BOS/SEP/EOS");
  const int budget = max_len - 3;
  int keep_r = static_cast<int>(ref_ids.size());
  int keep_c = static_cast<int>(cand_ids.size());
  const long long total = static_cast<long long>(keep_r) + keep_c;
  if (total > budget) {
    keep_r = static_cast<int>(static_cast<long long>(budget) * keep_r / total);
    keep_c = static_cast<int>(static_cast<long long>(budget) * keep_c / total);
  }
  PackedPair p;
  p.ref_tokens = keep_r;
  p.cand_tokens = keep_c;
  p.ids.reserve(keep_r + keep_c + 3);
  p.ids.push_back(Vocab::kBos);
  p.ids.insert(p.ids.end(), ref_ids.begin(), ref_ids.begin() + keep_r);
  p.ids.push_back(Vocab::kSep);
  p.ids.insert(p.ids.end(), cand_ids.begin(), cand_ids.begin() + keep_c);
  p.ids.push_back(Vocab::kEos);
  const int sep_pos = keep_r + 1;
  p.segments.resize(p.ids.size());
  for (std::size_t i = 0; i < p.ids.size(); ++i)
    p.segments[i] = static_cast<int>(i) <= sep_pos ? 0 : 1;
  return p;
}

MaskedBatch apply_mlm_mask(const PackedPair& pair, int vocab_size, double mask_prob,
                           SeededRng& rng, MaskMode mode) {
  if (mask_prob < 0.0 || mask_prob > 1.0) fail_contract("apply_mlm_mask: mask_prob outside [0,1]");
  if (vocab_size <= Vocab::kNumSpecials)
    fail_contract("apply_mlm_mask: vocabulary has no ordinary tokens");
  MaskedBatch out;
  out.input_ids = pair.ids;
  out.labels.assign(pair.ids.size(), kIgnoreId);
  out.selected.assign(pair.ids.size(), false);
  const int n_ordinary = vocab_size - Vocab::kNumSpecials;
  for (std::size_t i = 0; i < pair.ids.size(); ++i) {
    const int id = pair.ids[i];
    const bool eligible = !(id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos ||
                            id == Vocab::kSep || id == Vocab::kMask);
    if (!eligible) continue;
    if (mode == MaskMode::force_mask) {
      out.input_ids[i] = Vocab::kMask;
      out.labels[i] = id;
      out.selected[i] = true;
      continue;
    }
    if (rng.uniform() >= mask_prob) continue;
    out.labels[i] = id;
    out.selected[i] = true;
    const double action = rng.uniform();
    if (action < 0.8) {
      out.input_ids[i] = Vocab::kMask;
    } else if (action < 0.9) {
      out.input_ids[i] =
          Vocab::kNumSpecials + static_cast<int>(rng.uniform_int(n_ordinary));
    }  // else keep the original token
  }
  return out;
}

}  // namespace parakit
