#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "parakit/rng.hpp"

namespace parakit {

// Word-level tokenization: lowercase, split on whitespace, punctuation
// characters become standalone tokens ("don't stop" -> [don, ', t, stop]).
// Bytes >= 0x80 are treated as word characters so UTF-8 sequences survive.
std::vector<std::string> tokenize(const std::string& text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kUnk = 5;
  static constexpr int kNumSpecials = 6;

  static const std::vector<std::string>& special_tokens();
  static bool is_special_id(int id) { return id >= 0 && id < kNumSpecials; }

  Vocab();  // specials only

  // Most frequent tokens first, ties broken lexicographically; the six
  // specials always occupy ids 0..5.
  static Vocab from_counts(const std::vector<std::pair<std::string, long long>>& counts,
                           int max_size);
  static Vocab build(const std::vector<std::string>& texts, int max_size);
  static Vocab from_tokens(const std::vector<std::string>& id_to_token);

  int encode(const std::string& token) const;  // kUnk when absent
  const std::string& decode(int id) const;
  std::vector<int> encode_all(const std::vector<std::string>& tokens) const;
  std::vector<int> encode_text(const std::string& text) const;
  int size() const { return static_cast<int>(id_to_tok_.size()); }
  bool contains(const std::string& token) const { return tok_to_id_.count(token) > 0; }
  const std::vector<std::string>& tokens() const { return id_to_tok_; }

  // One token per line; the line number is the id and the first six lines are
  // the specials in PAD,BOS,EOS,SEP,MASK,UNK order.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  std::string joined(char sep = '\x1f') const;
  static Vocab from_joined(const std::string& s, char sep = '\x1f');

 private:
  std::vector<std::string> id_to_tok_;
  std::unordered_map<std::string, int> tok_to_id_;
};

struct PackedPair {
  std::vector<int> ids;       // BOS, ref tokens, SEP, cand tokens, EOS
  std::vector<int> segments;  // 0 through the SEP position, 1 afterwards
  int ref_tokens = 0;         // surviving counts after tail truncation
  int cand_tokens = 0;
};

// Joint encoding of a (reference, candidate) pair. When the packed length
// would exceed max_len, both token tails are truncated proportionally.
PackedPair pack_pair(const std::vector<int>& ref_ids, const std::vector<int>& cand_ids,
                     int max_len);

enum class MaskMode {
  bert,        // 80% MASK / 10% random ordinary id / 10% kept
  force_mask,  // every eligible position becomes MASK
};

struct MaskedBatch {
  std::vector<int> input_ids;
  std::vector<int> labels;  // original id at selected positions, ignore id elsewhere
  std::vector<bool> selected;
};

// Positions holding PAD/BOS/EOS/SEP/MASK are never eligible. Selection and
// replacement draws come from rng in a fixed left-to-right order.
MaskedBatch apply_mlm_mask(const PackedPair& pair, int vocab_size, double mask_prob,
                           SeededRng& rng, MaskMode mode = MaskMode::bert);

}  // namespace parakit
