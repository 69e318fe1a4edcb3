#include "parakit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "parakit/errors.hpp"
#include "parakit/text.hpp"

namespace parakit {
namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

struct Sentence {
  bool has_m1 = false;
  bool has_m2 = false;
  std::string m1, subj, m2, obj;
  std::string verb_base, verb_past;
};

Sentence sample_sentence(const Lexicon& lex, SeededRng& rng) {
  Sentence s;
  s.has_m1 = rng.bernoulli(0.8);
  s.has_m2 = rng.bernoulli(0.8);
  s.m1 = lex.modifiers[static_cast<size_t>(rng.uniform_int(static_cast<int>(lex.modifiers.size())))];
  s.m2 = lex.modifiers[static_cast<size_t>(rng.uniform_int(static_cast<int>(lex.modifiers.size())))];
  s.subj = lex.subjects[static_cast<size_t>(rng.uniform_int(static_cast<int>(lex.subjects.size())))];
  s.obj = lex.objects[static_cast<size_t>(rng.uniform_int(static_cast<int>(lex.objects.size())))];
  const auto& verb = lex.verbs[static_cast<size_t>(rng.uniform_int(static_cast<int>(lex.verbs.size())))];
  s.verb_base = verb.first;
  s.verb_past = verb.second;
  return s;
}

std::vector<std::string> render_base(const Sentence& s) {
  std::vector<std::string> out = {"the"};
  if (s.has_m1) out.push_back(s.m1);
  out.push_back(s.subj);
  out.push_back(s.verb_past);
  out.push_back("the");
  if (s.has_m2) out.push_back(s.m2);
  out.push_back(s.obj);
  return out;
}

std::set<std::string> content_set(const std::vector<std::string>& toks) {
  std::set<std::string> out;
  for (const auto& t : toks) {
    if (t != "the") out.insert(t);
  }
  return out;
}

double content_overlap(const std::vector<std::string>& ref, const std::vector<std::string>& cand) {
  auto r = content_set(ref);
  auto c = content_set(cand);
  if (r.empty()) return 0.0;
  size_t shared = 0;
  for (const auto& t : r) {
    if (c.count(t)) ++shared;
  }
  return static_cast<double>(shared) / static_cast<double>(r.size());
}

std::vector<std::string> render_transform(const Sentence& s, const std::string& transform,
                                          const Lexicon& lex, SeededRng& rng) {
  std::vector<std::string> out;
  if (transform == "identity") {
    return render_base(s);
  }
  if (transform == "negation") {
    out = {"the"};
    if (s.has_m1) out.push_back(s.m1);
    out.push_back(s.subj);
    out.push_back("did");
    out.push_back("not");
    out.push_back(s.verb_base);
    out.push_back("the");
    if (s.has_m2) out.push_back(s.m2);
    out.push_back(s.obj);
    return out;
  }
  if (transform == "summary") {
    return {"they", s.verb_past, "the", s.obj};
  }
  if (transform == "passive") {
    out = {"the"};
    if (s.has_m2) out.push_back(s.m2);
    out.push_back(s.obj);
    out.push_back("was");
    out.push_back(s.verb_past);
    out.push_back("by");
    out.push_back("the");
    if (s.has_m1) out.push_back(s.m1);
    out.push_back(s.subj);
    return out;
  }
  if (transform == "conditional_perfect") {
    out = {"the"};
    if (s.has_m1) out.push_back(s.m1);
    out.push_back(s.subj);
    out.push_back("would");
    out.push_back("have");
    out.push_back(s.verb_past);
    out.push_back("the");
    if (s.has_m2) out.push_back(s.m2);
    out.push_back(s.obj);
    return out;
  }
  if (transform == "personal") {
    out = {"we", s.verb_past, "the"};
    if (s.has_m2) out.push_back(s.m2);
    out.push_back(s.obj);
    return out;
  }
  if (transform == "informal") {
    out = {"some"};
    if (s.has_m1) out.push_back(s.m1);
    out.push_back(s.subj);
    out.push_back("like");
    out.push_back(s.verb_past);
    out.push_back("some");
    if (s.has_m2) out.push_back(s.m2);
    out.push_back(s.obj);
    return out;
  }
  if (transform == "unrelated") {
    auto ref = render_base(s);
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto fresh = render_base(sample_sentence(lex, rng));
      if (content_overlap(ref, fresh) < 0.3) return fresh;
    }
    fail_contract("unrelated transform could not find a low-overlap sentence");
  }
  fail_contract("unknown transform '" + transform + "'");
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += " ";
    out += toks[i];
  }
  return out;
}

bool contains(const std::vector<std::string>& toks, const std::string& t) {
  return std::find(toks.begin(), toks.end(), t) != toks.end();
}

void check_category(const std::vector<std::string>& items, const std::string& what) {
  if (items.size() < 5) {
    fail_format("lexicon category '" + what + "' needs at least 5 entries, got " +
                std::to_string(items.size()));
  }
}

}  // namespace

Lexicon Lexicon::load(const std::string& dir) {
  Lexicon lex;
  lex.subjects = read_lines(dir + "/subjects.txt");
  lex.objects = read_lines(dir + "/objects.txt");
  lex.modifiers = read_lines(dir + "/modifiers.txt");
  for (const auto& line : read_lines(dir + "/verbs.txt")) {
    auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      fail_format("verbs.txt line must be 'base past': '" + line + "'");
    }
    lex.verbs.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  check_category(lex.subjects, "subjects");
  check_category(lex.objects, "objects");
  check_category(lex.modifiers, "modifiers");
  if (lex.verbs.size() < 5) {
    fail_format("lexicon category 'verbs' needs at least 5 entries, got " +
                std::to_string(lex.verbs.size()));
  }
  return lex;
}

std::vector<std::string> Lexicon::all_words() const {
  std::vector<std::string> out;
  out.insert(out.end(), subjects.begin(), subjects.end());
  out.insert(out.end(), objects.begin(), objects.end());
  out.insert(out.end(), modifiers.begin(), modifiers.end());
  for (const auto& [base, past] : verbs) {
    out.push_back(base);
    out.push_back(past);
  }
  return out;
}

std::string detect_transform(const std::vector<std::string>& ref_tokens,
                             const std::vector<std::string>& cand_tokens) {
  if (ref_tokens == cand_tokens) return "identity";
  if (contains(cand_tokens, "not")) return "negation";
  if (contains(cand_tokens, "would")) return "conditional_perfect";
  if (contains(cand_tokens, "was") && contains(cand_tokens, "by")) return "passive";
  if (!cand_tokens.empty() && cand_tokens.front() == "we") return "personal";
  if (!cand_tokens.empty() && cand_tokens.front() == "they") return "summary";
  if (contains(cand_tokens, "some") || contains(cand_tokens, "like")) return "informal";
  return "unrelated";
}

std::vector<ParaExample> synth_generate(const Lexicon& lex, const SynthSpec& spec) {
  if (spec.n_pairs <= 0) fail_config("n_pairs must be positive");
  if (spec.labeled_fraction < 0.0 || spec.labeled_fraction > 1.0) {
    fail_config("labeled_fraction must lie in [0, 1]");
  }
  SeededRng rng(spec.seed);
  const auto& names = transform_names();
  std::vector<ParaExample> out;
  out.reserve(static_cast<size_t>(spec.n_pairs));
  for (int i = 0; i < spec.n_pairs; ++i) {
    Sentence s = sample_sentence(lex, rng);
    const std::string& t = names[static_cast<size_t>(rng.uniform_int(static_cast<int>(names.size())))];
    if (t == "summary" && !s.has_m1 && !s.has_m2) s.has_m1 = true;
    auto ref_toks = render_base(s);
    auto cand_toks = render_transform(s, t, lex, rng);
    if (detect_transform(ref_toks, cand_toks) != t) {
      fail_contract("generated candidate does not carry the marker for '" + t + "'");
    }
    ParaExample ex;
    ex.ref = join_tokens(ref_toks);
    ex.cand = join_tokens(cand_toks);
    ex.transform = t;
    ex.label = rng.bernoulli(spec.labeled_fraction) ? transform_label(t) : -1;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::string> corrupt_tokens(const std::vector<std::string>& tokens, int severity,
                                        const std::vector<std::string>& pool, SeededRng& rng) {
  if (severity < 0 || severity > 4) {
    fail_contract("severity must lie in 0..4, got " + std::to_string(severity));
  }
  // ceil(0.2 * severity * len) in exact integer arithmetic.
  size_t n_replace = (static_cast<size_t>(severity) * tokens.size() + 4) / 5;
  if (n_replace == 0) return tokens;
  if (pool.empty()) fail_contract("corruption pool is empty");
  std::vector<size_t> idx(tokens.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  rng.shuffle(idx);
  auto out = tokens;
  for (size_t k = 0; k < n_replace && k < idx.size(); ++k) {
    out[idx[k]] = pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
  }
  return out;
}

std::vector<ScoredPair> synth_generate_scored(const Lexicon& lex, const ScoredSpec& spec) {
  if (spec.n_pairs <= 0) fail_config("n_pairs must be positive");
  if (spec.max_severity < 0 || spec.max_severity > 4) {
    fail_config("max_severity must lie in 0..4");
  }
  SeededRng rng(spec.seed);
  const auto& names = transform_names();
  auto pool = lex.all_words();
  std::vector<ScoredPair> out;
  out.reserve(static_cast<size_t>(spec.n_pairs));
  for (int i = 0; i < spec.n_pairs; ++i) {
    Sentence s = sample_sentence(lex, rng);
    const std::string& t = names[static_cast<size_t>(rng.uniform_int(static_cast<int>(names.size())))];
    if (t == "summary" && !s.has_m1 && !s.has_m2) s.has_m1 = true;
    auto ref_toks = render_base(s);
    auto cand_toks = render_transform(s, t, lex, rng);
    int severity = rng.uniform_int(spec.max_severity + 1);
    cand_toks = corrupt_tokens(cand_toks, severity, pool, rng);
    ScoredPair sp;
    sp.group = "synth-" + t;
    sp.ref = join_tokens(ref_toks);
    sp.cand = join_tokens(cand_toks);
    // An unrelated candidate is total content replacement: the endpoint of the
    // corruption ladder (severity 5), however fluent the sentence.
    const int score_severity = t == "unrelated" ? 5 : severity;
    sp.score = std::clamp(1.0 - 0.2 * score_severity + rng.normal() * spec.noise_sd, 0.0, 1.0);
    out.push_back(std::move(sp));
  }
  return out;
}

PairLoadResult load_pairs_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open " + path);
  PairLoadResult result;
  std::string line;
  size_t total = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++total;
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 4 || fields[0].empty() || fields[1].empty()) {
      ++result.malformed;
      continue;
    }
    ParaExample ex;
    ex.ref = fields[0];
    ex.cand = fields[1];
    if (fields.size() >= 3 && !fields[2].empty()) {
      if (fields[2] == "0") {
        ex.label = 0;
      } else if (fields[2] == "1") {
        ex.label = 1;
      } else if (fields[2] == "-1") {
        ex.label = -1;
      } else {
        ++result.malformed;
        continue;
      }
    }
    if (fields.size() == 4) ex.transform = fields[3];
    result.examples.push_back(std::move(ex));
  }
  if (result.malformed * 10 > total) {
    fail_format(path + ": " + std::to_string(result.malformed) + " of " + std::to_string(total) +
                " lines malformed");
  }
  return result;
}

void save_pairs_tsv(const std::string& path, const std::vector<ParaExample>& examples) {
  std::ofstream out(path);
  if (!out) fail_io("cannot write " + path);
  for (const auto& ex : examples) {
    for (const std::string* field : {&ex.ref, &ex.cand, &ex.transform}) {
      if (field->find('\t') != std::string::npos || field->find('\n') != std::string::npos) {
        fail_contract("fields may not contain tabs or newlines");
      }
    }
    out << ex.ref << '\t' << ex.cand << '\t';
    if (ex.label >= 0) out << ex.label;
    out << '\t' << ex.transform << '\n';
  }
  if (!out.good()) fail_io("write failed for " + path);
}

std::vector<ScoredPair> load_scored_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open " + path);
  std::vector<ScoredPair> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      fail_format(path + " line " + std::to_string(line_no) +
                  ": expected group<TAB>ref<TAB>cand<TAB>score");
    }
    char* end = nullptr;
    double score = std::strtod(fields[3].c_str(), &end);
    if (end == fields[3].c_str() || *end != '\0' || !std::isfinite(score)) {
      fail_format(path + " line " + std::to_string(line_no) + ": bad score '" + fields[3] + "'");
    }
    out.push_back({fields[0], fields[1], fields[2], score});
  }
  return out;
}

void save_scored_tsv(const std::string& path, const std::vector<ScoredPair>& pairs) {
  std::ofstream out(path);
  if (!out) fail_io("cannot write " + path);
  for (const auto& sp : pairs) {
    for (const std::string* field : {&sp.group, &sp.ref, &sp.cand}) {
      if (field->find('\t') != std::string::npos || field->find('\n') != std::string::npos) {
        fail_contract("fields may not contain tabs or newlines");
      }
    }
    std::ostringstream score;
    score.precision(17);
    score << sp.score;
    out << sp.group << '\t' << sp.ref << '\t' << sp.cand << '\t' << score.str() << '\n';
  }
  if (!out.good()) fail_io("write failed for " + path);
}

}  // namespace parakit
