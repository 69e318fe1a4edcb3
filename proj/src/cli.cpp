#include "parakit/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "parakit/correlation.hpp"
#include "parakit/data.hpp"
#include "parakit/errors.hpp"
#include "parakit/finetune.hpp"
#include "parakit/generation.hpp"
#include "parakit/manifest.hpp"
#include "parakit/metrics.hpp"
#include "parakit/model.hpp"
#include "parakit/pretrain.hpp"
#include "parakit/text.hpp"

namespace parakit {
namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmtg(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail_io("cannot create directory " + dir + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail_io("cannot open " + tmp);
    out << content;
    if (!out) fail_io("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail_io("rename failed for " + path + ": " + ec.message());
}

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

double parse_extra_double(const std::map<std::string, std::string>& extra, const std::string& key,
                          double fallback) {
  auto it = extra.find(key);
  if (it == extra.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) fail_format("checkpoint field '" + key + "' is not a number");
    return v;
  } catch (const std::invalid_argument&) {
    fail_format("checkpoint field '" + key + "' is not a number");
  } catch (const std::out_of_range&) {
    fail_format("checkpoint field '" + key + "' is out of range");
  }
}

// Shared model-geometry flags; attached wherever a command builds a model
// from scratch rather than loading a checkpoint.
struct ModelFlags {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ffn = 128;
  int bottleneck = 8;
  int max_len = 64;
  double dropout = 0.1;
  int vocab_size = 512;

  void attach(CLI::App* sub) {
    sub->add_option("--layers", layers, "encoder/decoder layer count");
    sub->add_option("--hidden", hidden, "hidden width");
    sub->add_option("--heads", heads, "attention heads");
    sub->add_option("--ffn", ffn, "feed-forward width");
    sub->add_option("--bottleneck", bottleneck, "edit-vector width");
    sub->add_option("--max-len", max_len, "maximum packed sequence length");
    sub->add_option("--dropout", dropout, "dropout probability");
    sub->add_option("--vocab-size", vocab_size, "cap when building the vocabulary");
  }

  ModelConfig to_config(int vocab, std::uint64_t seed, bool use_conditioning = true) const {
    ModelConfig mc;
    mc.vocab_size = vocab;
    mc.max_len = max_len;
    mc.layers = layers;
    mc.hidden = hidden;
    mc.heads = heads;
    mc.ffn = ffn;
    mc.bottleneck = bottleneck;
    mc.dropout = static_cast<float>(dropout);
    mc.use_conditioning = use_conditioning;
    mc.seed = seed;
    return mc;
  }

  void snapshot(std::map<std::string, std::string>& cfg) const {
    cfg["layers"] = std::to_string(layers);
    cfg["hidden"] = std::to_string(hidden);
    cfg["heads"] = std::to_string(heads);
    cfg["ffn"] = std::to_string(ffn);
    cfg["bottleneck"] = std::to_string(bottleneck);
    cfg["max_len"] = std::to_string(max_len);
    cfg["dropout"] = fmt_exact(dropout);
    cfg["vocab_size"] = std::to_string(vocab_size);
  }
};

Vocab vocab_from_pairs(const std::vector<ParaExample>& examples, int max_size) {
  std::vector<std::string> texts;
  texts.reserve(examples.size() * 2);
  for (const auto& ex : examples) {
    texts.push_back(ex.ref);
    texts.push_back(ex.cand);
  }
  return Vocab::build(texts, max_size);
}

std::vector<std::string> classical_selection(const std::string& metric) {
  if (metric == "all") return metric_names();
  for (const auto& name : metric_names()) {
    if (name == metric) return {metric};
  }
  if (metric == "learned") return {};
  fail_config("unknown metric '" + metric + "'");
}

MetricReport learned_report(const std::string& checkpoint, const std::vector<ScoredPair>& scored) {
  LoadedModel lm = load_model(checkpoint);
  double mean = parse_extra_double(lm.extra, "score_mean", 0.0);
  double sd = parse_extra_double(lm.extra, "score_sd", 1.0);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> groups;
  std::vector<double> humans;
  for (const auto& sp : scored) {
    pairs.emplace_back(sp.ref, sp.cand);
    groups.push_back(sp.group);
    humans.push_back(sp.score);
  }
  auto preds = predict_scores(lm.model, lm.vocab, pairs, mean, sd);
  return evaluate_metric("learned", groups, preds, humans);
}

// Keeps a seed-chosen subset of the train split in original order, so a full
// fraction is exactly the untouched split.
std::vector<ScoredPair> subsample_train(const std::vector<ScoredPair>& train, double fraction,
                                        std::uint64_t seed) {
  const int n = static_cast<int>(train.size());
  const int keep = std::max(1, static_cast<int>(std::ceil(fraction * n - 1e-9)));
  if (keep >= n) return train;
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  SeededRng rng(splitmix64(seed ^ 0x5b5ea6d5f3c0f2e1ULL));
  rng.shuffle(idx);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<ScoredPair> out;
  out.reserve(keep);
  for (int i : idx) out.push_back(train[i]);
  return out;
}

struct SynthCmd {
  std::string out_dir;
  std::string lexicon = std::string(PARAKIT_DATA_DIR) + "/lexicon";
  int n_pairs = 1000;
  int n_scored = 500;
  int max_severity = 4;
  double labeled_fraction = 1.0 / 3.0;
  double noise_sd = 0.05;
  std::uint64_t seed = 1;
};

int run_synth(const SynthCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  if (c.n_pairs < 1) fail_config("n-pairs must be at least 1");
  if (c.n_scored < 1) fail_config("n-scored must be at least 1");
  if (c.labeled_fraction < 0.0 || c.labeled_fraction > 1.0) {
    fail_config("labeled-fraction must lie in [0, 1]");
  }
  if (c.max_severity < 0 || c.max_severity > 4) fail_config("max-severity must lie in 0..4");
  if (c.noise_sd < 0.0) fail_config("noise-sd must be non-negative");

  RunManifest man;
  man.subcommand = "synth";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  Lexicon lex = Lexicon::load(c.lexicon);
  SynthSpec ps;
  ps.n_pairs = c.n_pairs;
  ps.seed = c.seed;
  ps.labeled_fraction = c.labeled_fraction;
  auto pairs = synth_generate(lex, ps);
  ScoredSpec ss;
  ss.n_pairs = c.n_scored;
  ss.seed = c.seed + 1;
  ss.max_severity = c.max_severity;
  ss.noise_sd = c.noise_sd;
  auto scored = synth_generate_scored(lex, ss);

  ensure_dir(c.out_dir);
  const std::string pairs_path = c.out_dir + "/pairs.tsv";
  const std::string scored_path = c.out_dir + "/scored.tsv";
  save_pairs_tsv(pairs_path, pairs);
  save_scored_tsv(scored_path, scored);

  man.config = {{"n_pairs", std::to_string(c.n_pairs)},
                {"n_scored", std::to_string(c.n_scored)},
                {"labeled_fraction", fmt_exact(c.labeled_fraction)},
                {"max_severity", std::to_string(c.max_severity)},
                {"noise_sd", fmt_exact(c.noise_sd)},
                {"lexicon", c.lexicon}};
  man.inputs = {c.lexicon};
  man.outputs = {pairs_path, scored_path};
  write_manifest(c.out_dir, man);

  out << "wrote " << pairs.size() << " pairs to " << pairs_path << "\n";
  out << "wrote " << scored.size() << " scored pairs to " << scored_path << "\n";
  return 0;
}

struct BuildVocabCmd {
  std::string pairs;
  std::string out_dir;
  int max_size = 512;
  std::uint64_t seed = 1;
};

int run_build_vocab(const BuildVocabCmd& c, const std::vector<std::string>& argv,
                    std::ostream& out) {
  if (c.max_size <= Vocab::kNumSpecials) {
    fail_config("max-size must exceed the special-token count");
  }
  RunManifest man;
  man.subcommand = "build-vocab";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  auto loaded = load_pairs_tsv(c.pairs);
  Vocab vocab = vocab_from_pairs(loaded.examples, c.max_size);
  ensure_dir(c.out_dir);
  const std::string vocab_path = c.out_dir + "/vocab.txt";
  vocab.save(vocab_path);

  man.config = {{"max_size", std::to_string(c.max_size)}};
  man.inputs = {c.pairs};
  man.outputs = {vocab_path};
  write_manifest(c.out_dir, man);

  out << "built vocabulary of " << vocab.size() << " tokens from " << loaded.examples.size()
      << " pairs (" << loaded.malformed << " malformed lines skipped) at " << vocab_path << "\n";
  return 0;
}

struct PretrainCmd {
  std::string pairs;
  std::string out_dir;
  std::string vocab_path;
  ModelFlags model;
  PretrainConfig train;
  bool no_ar = false;
  bool no_mlm = false;
  bool no_cls = false;
  bool no_conditioning = false;
  std::uint64_t seed = 1;
};

int run_pretrain(const PretrainCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest man;
  man.subcommand = "pretrain";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  auto loaded = load_pairs_tsv(c.pairs);
  if (loaded.examples.empty()) fail_config("no usable examples in " + c.pairs);
  Vocab vocab = c.vocab_path.empty() ? vocab_from_pairs(loaded.examples, c.model.vocab_size)
                                     : Vocab::load(c.vocab_path);

  ModelConfig mc = c.model.to_config(vocab.size(), c.seed, !c.no_conditioning);
  ParaphraseModel<float> model(mc);

  PretrainConfig pc = c.train;
  pc.enable_ar = !c.no_ar;
  pc.enable_mlm = !c.no_mlm;
  pc.enable_cls = !c.no_cls;
  pc.seed = c.seed;

  ensure_dir(c.out_dir);
  auto res = pretrain_run(model, vocab, loaded.examples, pc, c.out_dir);

  c.model.snapshot(man.config);
  man.config["alpha"] = fmt_exact(pc.alpha);
  man.config["beta"] = fmt_exact(pc.beta);
  man.config["enable_ar"] = pc.enable_ar ? "true" : "false";
  man.config["enable_mlm"] = pc.enable_mlm ? "true" : "false";
  man.config["enable_cls"] = pc.enable_cls ? "true" : "false";
  man.config["use_conditioning"] = mc.use_conditioning ? "true" : "false";
  man.config["mask_prob"] = fmt_exact(pc.mask_prob);
  man.config["batch_size"] = std::to_string(pc.batch_size);
  man.config["lr"] = fmt_exact(pc.lr);
  man.config["warmup_steps"] = std::to_string(pc.warmup_steps);
  man.config["total_steps"] = std::to_string(pc.total_steps);
  man.config["clip_norm"] = fmt_exact(pc.clip_norm);
  man.config["checkpoint_every"] = std::to_string(pc.checkpoint_every);
  man.config["vocab"] = c.vocab_path.empty() ? "<built from pairs>" : c.vocab_path;
  man.inputs = {c.pairs};
  if (!c.vocab_path.empty()) man.inputs.push_back(c.vocab_path);
  man.outputs = res.checkpoint_paths;
  man.outputs.push_back(res.loss_csv_path);
  write_manifest(c.out_dir, man);

  const auto& last = res.log.back();
  out << "pretrained " << pc.total_steps << " steps; final losses total=" << fmt6(last.l_total)
      << " ar=" << fmt6(last.l_ar) << " mlm=" << fmt6(last.l_mlm) << " cls=" << fmt6(last.l_cls)
      << "\n";
  out << "checkpoint: " << res.checkpoint_paths.back() << "\n";
  out << "loss log: " << res.loss_csv_path << "\n";
  return 0;
}

struct FinetuneCmd {
  std::string checkpoint;
  std::string scored;
  std::string out_dir;
  FinetuneConfig train;
  double validation_fraction = 0.10;
  std::uint64_t seed = 1;
};

int run_finetune(const FinetuneCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest man;
  man.subcommand = "finetune";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  LoadedModel lm = load_model(c.checkpoint);
  auto scored = load_scored_tsv(c.scored);
  auto [train, val] = split_by_reference(scored, c.validation_fraction, c.seed);

  ensure_dir(c.out_dir);
  const std::string train_path = c.out_dir + "/train.tsv";
  const std::string val_path = c.out_dir + "/val.tsv";
  save_scored_tsv(train_path, train);
  save_scored_tsv(val_path, val);

  FinetuneConfig fc = c.train;
  fc.validation_fraction = c.validation_fraction;
  fc.seed = c.seed;
  auto res = finetune_run(lm.model, lm.vocab, train, val, fc, c.out_dir);

  man.config["batch_size"] = std::to_string(fc.batch_size);
  man.config["lr"] = fmt_exact(fc.lr);
  man.config["total_steps"] = std::to_string(fc.total_steps);
  man.config["validation_fraction"] = fmt_exact(fc.validation_fraction);
  man.config["eval_every"] = std::to_string(fc.eval_every);
  man.config["freeze_layers"] = std::to_string(fc.freeze_layers);
  man.config["clip_norm"] = fmt_exact(fc.clip_norm);
  man.inputs = {c.checkpoint, c.scored};
  man.outputs = {res.checkpoint_path, res.curve_csv_path, train_path, val_path};
  write_manifest(c.out_dir, man);

  const auto& last = res.curve.back();
  out << "finetuned " << fc.total_steps << " steps on " << train.size() << " train / "
      << val.size() << " validation pairs\n";
  out << "final val_mse=" << fmt6(last.val_mse) << " val_pearson=" << fmt6(last.val_pearson)
      << "\n";
  out << "checkpoint: " << res.checkpoint_path << "\n";
  return 0;
}

struct EvaluateCmd {
  std::string scored;
  std::string out_dir;
  std::string metric = "all";
  std::string checkpoint;
  std::uint64_t seed = 1;
};

int run_evaluate(const EvaluateCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  if (c.metric == "learned" && c.checkpoint.empty()) {
    fail_config("metric 'learned' needs --checkpoint");
  }
  RunManifest man;
  man.subcommand = "evaluate";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  auto scored = load_scored_tsv(c.scored);
  if (scored.empty()) fail_degenerate("no scored pairs in " + c.scored);

  std::vector<std::string> groups;
  std::vector<double> humans;
  for (const auto& sp : scored) {
    groups.push_back(sp.group);
    humans.push_back(sp.score);
  }

  std::vector<MetricReport> reports;
  for (const auto& name : classical_selection(c.metric)) {
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& sp : scored) values.push_back(score_pair(name, sp.ref, sp.cand).value);
    reports.push_back(evaluate_metric(name, groups, values, humans));
  }
  if (!c.checkpoint.empty()) reports.push_back(learned_report(c.checkpoint, scored));

  ensure_dir(c.out_dir);
  const std::string csv_path = c.out_dir + "/report.csv";
  const std::string md_path = c.out_dir + "/report.md";
  write_text_atomic(csv_path, report_csv(reports));
  write_text_atomic(md_path, report_markdown(reports));

  man.config = {{"metric", c.metric}};
  man.inputs = {c.scored};
  if (!c.checkpoint.empty()) man.inputs.push_back(c.checkpoint);
  man.outputs = {csv_path, md_path};
  write_manifest(c.out_dir, man);

  out << report_markdown(reports);
  out << "report: " << csv_path << "\n";
  return 0;
}

struct MetricsCmd {
  std::string pairs;
  std::string out_dir;
  std::string metric = "all";
  std::uint64_t seed = 1;
};

int run_metrics(const MetricsCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  auto names = classical_selection(c.metric);
  if (names.empty()) fail_config("metrics needs a classical metric name or 'all'");

  RunManifest man;
  man.subcommand = "metrics";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  auto loaded = load_pairs_tsv(c.pairs);
  std::string csv = "index";
  for (const auto& n : names) csv += "," + n;
  csv += "\n";
  for (std::size_t i = 0; i < loaded.examples.size(); ++i) {
    csv += std::to_string(i);
    for (const auto& n : names) {
      csv += "," + fmtg(score_pair(n, loaded.examples[i].ref, loaded.examples[i].cand).value);
    }
    csv += "\n";
  }

  ensure_dir(c.out_dir);
  const std::string csv_path = c.out_dir + "/pair_metrics.csv";
  write_text_atomic(csv_path, csv);

  man.config = {{"metric", c.metric}};
  man.inputs = {c.pairs};
  man.outputs = {csv_path};
  write_manifest(c.out_dir, man);

  out << "scored " << loaded.examples.size() << " pairs (" << loaded.malformed
      << " malformed lines skipped) to " << csv_path << "\n";
  return 0;
}

struct GenerateCmd {
  std::string checkpoint;
  std::string out_dir;
  std::string demo_ref;
  std::string demo_cand;
  std::vector<std::string> refs;
  std::string refs_file;
  BeamConfig beam;
  std::uint64_t seed = 1;
};

int run_generate(const GenerateCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest man;
  man.subcommand = "generate";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  std::vector<std::string> refs = c.refs;
  if (!c.refs_file.empty()) {
    for (auto& line : read_lines(c.refs_file)) refs.push_back(line);
  }
  if (refs.empty()) fail_config("no references given; use --ref or --refs-file");

  LoadedModel lm = load_model(c.checkpoint);

  std::string jsonl;
  for (const auto& ref : refs) {
    OneShotResult res = one_shot(lm.model, lm.vocab, c.demo_ref, c.demo_cand, ref, c.beam);
    nlohmann::json j;
    j["ref"] = ref;
    j["candidate"] = res.candidate;
    j["entail_prob"] = res.entail_prob;
    j["beam_scores"] = res.beam_scores;
    j["leakage"] = res.leakage;
    std::string line = j.dump();
    out << line << "\n";
    jsonl += line + "\n";
  }

  ensure_dir(c.out_dir);
  const std::string jsonl_path = c.out_dir + "/generations.jsonl";
  write_text_atomic(jsonl_path, jsonl);

  man.config = {{"demo_ref", c.demo_ref},
                {"demo_cand", c.demo_cand},
                {"beam", std::to_string(c.beam.beam)},
                {"max_len", std::to_string(c.beam.max_len)},
                {"length_penalty", fmt_exact(c.beam.length_penalty)}};
  man.inputs = {c.checkpoint};
  if (!c.refs_file.empty()) man.inputs.push_back(c.refs_file);
  man.outputs = {jsonl_path};
  write_manifest(c.out_dir, man);
  return 0;
}

struct SweepCmd {
  std::string kind;
  std::vector<double> grid;
  std::string out_dir;
  std::string pairs;
  std::string scored;
  std::string checkpoint;
  ModelFlags model;
  int pretrain_steps = 2000;
  double pretrain_lr = 3e-4;
  int pretrain_warmup = 100;
  int pretrain_batch = 16;
  int finetune_steps = 2000;
  double finetune_lr = 1e-5;
  int finetune_batch = 32;
  int eval_every = 50;
  int freeze_layers = 0;
  bool parallel = false;
  std::uint64_t seed = 1;
};

struct SweepRow {
  double grid_value = 0.0;
  int n_train = 0;
  int n_val = 0;
  double pearson_abs = 0.0;
  double kendall_abs = 0.0;
};

MetricReport sweep_eval(const ParaphraseModel<float>& model, const Vocab& vocab,
                        const std::vector<ScoredPair>& val, double mean, double sd) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> groups;
  std::vector<double> humans;
  for (const auto& sp : val) {
    pairs.emplace_back(sp.ref, sp.cand);
    groups.push_back(sp.group);
    humans.push_back(sp.score);
  }
  auto preds = predict_scores(model, vocab, pairs, mean, sd);
  return evaluate_metric("learned", groups, preds, humans);
}

int run_sweep(const SweepCmd& c, const std::vector<std::string>& argv, std::ostream& out) {
  const bool by_fraction = c.kind == "finetune_fraction";
  if (!by_fraction && c.kind != "pretrain_steps") {
    fail_config("kind must be 'pretrain_steps' or 'finetune_fraction'");
  }
  if (c.grid.empty()) fail_config("grid must be non-empty");
  for (std::size_t i = 1; i < c.grid.size(); ++i) {
    if (c.grid[i] <= c.grid[i - 1]) fail_config("grid must be strictly ascending");
  }
  for (double g : c.grid) {
    if (by_fraction) {
      if (g <= 0.0 || g > 1.0) fail_config("fractions must lie in (0, 1]");
    } else if (g < 1.0 || g != std::floor(g)) {
      fail_config("pretrain step counts must be positive integers");
    }
  }
  if (c.scored.empty()) fail_config("sweep needs --scored");
  if (!by_fraction && c.pairs.empty()) fail_config("pretrain_steps sweep needs --pairs");
  if (by_fraction && c.checkpoint.empty() && c.pairs.empty()) {
    fail_config("finetune_fraction sweep needs --checkpoint or --pairs");
  }

  RunManifest man;
  man.subcommand = "sweep";
  man.argv = argv;
  man.started = iso_utc_now();
  man.seed = c.seed;

  auto scored = load_scored_tsv(c.scored);
  // Validation held at a fixed quarter of the data so every grid point is
  // measured against the same held-out set.
  auto [train_full, val] = split_by_reference(scored, 0.25, c.seed);

  ensure_dir(c.out_dir);
  save_scored_tsv(c.out_dir + "/train.tsv", train_full);
  save_scored_tsv(c.out_dir + "/val.tsv", val);

  PretrainConfig base_pc;
  base_pc.total_steps = c.pretrain_steps;
  base_pc.lr = c.pretrain_lr;
  base_pc.warmup_steps = c.pretrain_warmup;
  base_pc.batch_size = c.pretrain_batch;
  base_pc.seed = c.seed;

  FinetuneConfig base_fc;
  base_fc.batch_size = c.finetune_batch;
  base_fc.lr = c.finetune_lr;
  base_fc.total_steps = c.finetune_steps;
  base_fc.validation_fraction = 0.25;
  base_fc.eval_every = c.eval_every;
  base_fc.freeze_layers = c.freeze_layers;
  base_fc.seed = c.seed;

  std::vector<ParaExample> corpus;
  Vocab corpus_vocab;
  if (!c.pairs.empty()) {
    auto loaded = load_pairs_tsv(c.pairs);
    if (loaded.examples.empty()) fail_config("no usable examples in " + c.pairs);
    corpus = std::move(loaded.examples);
    corpus_vocab = vocab_from_pairs(corpus, c.model.vocab_size);
  }

  std::string base_ckpt = c.checkpoint;
  if (by_fraction && base_ckpt.empty()) {
    ParaphraseModel<float> model(c.model.to_config(corpus_vocab.size(), c.seed));
    auto res = pretrain_run(model, corpus_vocab, corpus, base_pc, c.out_dir + "/base_pretrain");
    base_ckpt = res.checkpoint_paths.back();
  }

  auto run_point = [&](int i) -> SweepRow {
    const double g = c.grid[static_cast<std::size_t>(i)];
    const std::string dir = c.out_dir + "/point_" + std::to_string(i);
    SweepRow row;
    row.grid_value = g;
    row.n_val = static_cast<int>(val.size());
    if (by_fraction) {
      LoadedModel lm = load_model(base_ckpt);
      auto sub = subsample_train(train_full, g, c.seed);
      row.n_train = static_cast<int>(sub.size());
      auto res = finetune_run(lm.model, lm.vocab, sub, val, base_fc, dir);
      auto rep = sweep_eval(lm.model, lm.vocab, val, res.score_mean, res.score_sd);
      row.pearson_abs = rep.mean_pearson_abs;
      row.kendall_abs = rep.mean_kendall_abs;
    } else {
      PretrainConfig pc = base_pc;
      pc.total_steps = static_cast<int>(g);
      ParaphraseModel<float> model(c.model.to_config(corpus_vocab.size(), c.seed));
      pretrain_run(model, corpus_vocab, corpus, pc, dir + "/pretrain");
      row.n_train = static_cast<int>(train_full.size());
      auto res = finetune_run(model, corpus_vocab, train_full, val, base_fc, dir);
      auto rep = sweep_eval(model, corpus_vocab, val, res.score_mean, res.score_sd);
      row.pearson_abs = rep.mean_pearson_abs;
      row.kendall_abs = rep.mean_kendall_abs;
    }
    return row;
  };

  std::vector<SweepRow> rows(c.grid.size());
  if (c.parallel) {
    std::vector<std::future<SweepRow>> futures;
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      futures.push_back(std::async(std::launch::async, run_point, static_cast<int>(i)));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) rows[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < c.grid.size(); ++i) rows[i] = run_point(static_cast<int>(i));
  }

  std::string csv = "kind,grid_value,n_train,n_val,pearson_abs,kendall_abs\n";
  for (const auto& r : rows) {
    csv += c.kind + "," + fmtg(r.grid_value) + "," + std::to_string(r.n_train) + "," +
           std::to_string(r.n_val) + "," + fmt6(r.pearson_abs) + "," + fmt6(r.kendall_abs) + "\n";
  }
  const std::string csv_path = c.out_dir + "/sweep.csv";
  write_text_atomic(csv_path, csv);

  std::string grid_str;
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    grid_str += (i ? "," : "") + fmtg(c.grid[i]);
  }
  c.model.snapshot(man.config);
  man.config["kind"] = c.kind;
  man.config["grid"] = grid_str;
  man.config["pretrain_steps"] = std::to_string(c.pretrain_steps);
  man.config["pretrain_lr"] = fmt_exact(c.pretrain_lr);
  man.config["pretrain_warmup"] = std::to_string(c.pretrain_warmup);
  man.config["pretrain_batch"] = std::to_string(c.pretrain_batch);
  man.config["finetune_steps"] = std::to_string(c.finetune_steps);
  man.config["finetune_lr"] = fmt_exact(c.finetune_lr);
  man.config["finetune_batch"] = std::to_string(c.finetune_batch);
  man.config["eval_every"] = std::to_string(c.eval_every);
  man.config["freeze_layers"] = std::to_string(c.freeze_layers);
  man.config["validation_fraction"] = "0.25";
  man.config["parallel"] = c.parallel ? "true" : "false";
  man.inputs = {c.scored};
  if (!c.pairs.empty()) man.inputs.push_back(c.pairs);
  if (!c.checkpoint.empty()) man.inputs.push_back(c.checkpoint);
  man.outputs = {csv_path};
  write_manifest(c.out_dir, man);

  out << "kind,grid_value,n_train,n_val,pearson_abs,kendall_abs\n";
  for (const auto& r : rows) {
    out << c.kind << "," << fmtg(r.grid_value) << "," << r.n_train << "," << r.n_val << ","
        << fmt6(r.pearson_abs) << "," << fmt6(r.kendall_abs) << "\n";
  }
  out << "sweep report: " << csv_path << "\n";
  return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"paraphrase representation pipeline", "parakit"};
  app.require_subcommand(1);

  auto synth_cmd = std::make_shared<SynthCmd>();
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus and scored set");
  synth->add_option("--out-dir", synth_cmd->out_dir, "artifact directory")->required();
  synth->add_option("--seed", synth_cmd->seed, "random seed");
  synth->add_option("--n-pairs", synth_cmd->n_pairs, "paraphrase pair count");
  synth->add_option("--n-scored", synth_cmd->n_scored, "scored pair count");
  synth->add_option("--labeled-fraction", synth_cmd->labeled_fraction,
                    "fraction of pairs carrying entailment labels");
  synth->add_option("--max-severity", synth_cmd->max_severity, "highest corruption severity");
  synth->add_option("--noise-sd", synth_cmd->noise_sd, "score noise standard deviation");
  synth->add_option("--lexicon", synth_cmd->lexicon, "lexicon directory");
  synth->set_config("--config", "", "key=value configuration file");
  synth->callback([&, synth_cmd] { run_synth(*synth_cmd, args, out); });

  auto bv_cmd = std::make_shared<BuildVocabCmd>();
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from a pairs file");
  bv->add_option("--pairs", bv_cmd->pairs, "tab-separated pairs file")->required();
  bv->add_option("--out-dir", bv_cmd->out_dir, "artifact directory")->required();
  bv->add_option("--max-size", bv_cmd->max_size, "vocabulary size cap");
  bv->add_option("--seed", bv_cmd->seed, "random seed");
  bv->set_config("--config", "", "key=value configuration file");
  bv->callback([&, bv_cmd] { run_build_vocab(*bv_cmd, args, out); });

  auto pre_cmd = std::make_shared<PretrainCmd>();
  auto* pre = app.add_subcommand("pretrain", "pretrain a model on a pairs file");
  pre->add_option("--pairs", pre_cmd->pairs, "tab-separated pairs file")->required();
  pre->add_option("--out-dir", pre_cmd->out_dir, "artifact directory")->required();
  pre->add_option("--vocab", pre_cmd->vocab_path, "vocabulary file (default: built from pairs)");
  pre->add_option("--seed", pre_cmd->seed, "random seed");
  pre_cmd->model.attach(pre);
  pre->add_option("--alpha", pre_cmd->train.alpha, "masked-token loss weight");
  pre->add_option("--beta", pre_cmd->train.beta, "entailment loss weight");
  pre->add_option("--mask-prob", pre_cmd->train.mask_prob, "masking probability");
  pre->add_option("--batch-size", pre_cmd->train.batch_size, "batch size");
  pre->add_option("--lr", pre_cmd->train.lr, "peak learning rate");
  pre->add_option("--warmup-steps", pre_cmd->train.warmup_steps, "linear warmup steps");
  pre->add_option("--total-steps,--steps", pre_cmd->train.total_steps, "training steps");
  pre->add_option("--clip-norm", pre_cmd->train.clip_norm, "gradient clipping norm");
  pre->add_option("--checkpoint-every", pre_cmd->train.checkpoint_every,
                  "checkpoint cadence (0: final only)");
  pre->add_flag("--no-ar", pre_cmd->no_ar, "disable the autoregressive loss");
  pre->add_flag("--no-mlm", pre_cmd->no_mlm, "disable the masked-token loss");
  pre->add_flag("--no-cls", pre_cmd->no_cls, "disable the entailment loss");
  pre->add_flag("--no-conditioning", pre_cmd->no_conditioning,
                "ablate the edit-vector conditioning");
  pre->set_config("--config", "", "key=value configuration file");
  pre->callback([&, pre_cmd] { run_pretrain(*pre_cmd, args, out); });

  auto ft_cmd = std::make_shared<FinetuneCmd>();
  auto* ft = app.add_subcommand("finetune", "finetune a checkpoint on scored pairs");
  ft->add_option("--checkpoint", ft_cmd->checkpoint, "pretrained checkpoint")->required();
  ft->add_option("--scored", ft_cmd->scored, "tab-separated scored file")->required();
  ft->add_option("--out-dir", ft_cmd->out_dir, "artifact directory")->required();
  ft->add_option("--seed", ft_cmd->seed, "random seed");
  ft->add_option("--validation-fraction", ft_cmd->validation_fraction,
                 "held-out fraction, grouped by reference");
  ft->add_option("--batch-size", ft_cmd->train.batch_size, "batch size");
  ft->add_option("--lr", ft_cmd->train.lr, "learning rate");
  ft->add_option("--total-steps,--steps", ft_cmd->train.total_steps, "training steps");
  ft->add_option("--eval-every", ft_cmd->train.eval_every, "validation cadence");
  ft->add_option("--freeze-layers", ft_cmd->train.freeze_layers,
                 "freeze embeddings and the lowest N edit layers");
  ft->add_option("--clip-norm", ft_cmd->train.clip_norm, "gradient clipping norm");
  ft->set_config("--config", "", "key=value configuration file");
  ft->callback([&, ft_cmd] { run_finetune(*ft_cmd, args, out); });

  auto ev_cmd = std::make_shared<EvaluateCmd>();
  auto* ev = app.add_subcommand("evaluate", "correlate metrics with scores, grouped");
  ev->add_option("--scored", ev_cmd->scored, "tab-separated scored file")->required();
  ev->add_option("--out-dir", ev_cmd->out_dir, "artifact directory")->required();
  ev->add_option("--metric", ev_cmd->metric, "metric name, 'all', or 'learned'");
  ev->add_option("--checkpoint", ev_cmd->checkpoint, "checkpoint for the learned metric");
  ev->add_option("--seed", ev_cmd->seed, "random seed");
  ev->set_config("--config", "", "key=value configuration file");
  ev->callback([&, ev_cmd] { run_evaluate(*ev_cmd, args, out); });

  auto mt_cmd = std::make_shared<MetricsCmd>();
  auto* mt = app.add_subcommand("metrics", "score each pair with classical metrics");
  mt->add_option("--pairs", mt_cmd->pairs, "tab-separated pairs file")->required();
  mt->add_option("--out-dir", mt_cmd->out_dir, "artifact directory")->required();
  mt->add_option("--metric", mt_cmd->metric, "metric name or 'all'");
  mt->add_option("--seed", mt_cmd->seed, "random seed");
  mt->set_config("--config", "", "key=value configuration file");
  mt->callback([&, mt_cmd] { run_metrics(*mt_cmd, args, out); });

  auto gen_cmd = std::make_shared<GenerateCmd>();
  auto* gen = app.add_subcommand("generate", "one-shot paraphrase generation");
  gen->add_option("--checkpoint", gen_cmd->checkpoint, "pretrained checkpoint")->required();
  gen->add_option("--out-dir", gen_cmd->out_dir, "artifact directory")->required();
  gen->add_option("--demo-ref", gen_cmd->demo_ref, "demonstration reference")->required();
  gen->add_option("--demo-cand", gen_cmd->demo_cand, "demonstration candidate")->required();
  gen->add_option("--ref", gen_cmd->refs, "reference to paraphrase (repeatable)");
  gen->add_option("--refs-file", gen_cmd->refs_file, "file with one reference per line");
  gen->add_option("--beam", gen_cmd->beam.beam, "beam width");
  gen->add_option("--max-len", gen_cmd->beam.max_len, "generation length cap");
  gen->add_option("--length-penalty", gen_cmd->beam.length_penalty,
                  "length normalization exponent");
  gen->add_option("--seed", gen_cmd->seed, "random seed");
  gen->set_config("--config", "", "key=value configuration file");
  gen->callback([&, gen_cmd] { run_generate(*gen_cmd, args, out); });

  auto sw_cmd = std::make_shared<SweepCmd>();
  auto* sw = app.add_subcommand("sweep", "grid over pretraining steps or train fraction");
  sw->add_option("--kind", sw_cmd->kind, "'pretrain_steps' or 'finetune_fraction'")->required();
  sw->add_option("--grid", sw_cmd->grid, "ascending grid values")->required()->delimiter(',');
  sw->add_option("--out-dir", sw_cmd->out_dir, "artifact directory")->required();
  sw->add_option("--scored", sw_cmd->scored, "tab-separated scored file")->required();
  sw->add_option("--pairs", sw_cmd->pairs, "pairs file for pretraining");
  sw->add_option("--checkpoint", sw_cmd->checkpoint, "base checkpoint for fraction sweeps");
  sw->add_option("--seed", sw_cmd->seed, "random seed");
  sw_cmd->model.attach(sw);
  sw->add_option("--pretrain-steps", sw_cmd->pretrain_steps, "pretraining steps");
  sw->add_option("--pretrain-lr", sw_cmd->pretrain_lr, "pretraining learning rate");
  sw->add_option("--pretrain-warmup", sw_cmd->pretrain_warmup, "pretraining warmup steps");
  sw->add_option("--pretrain-batch", sw_cmd->pretrain_batch, "pretraining batch size");
  sw->add_option("--finetune-steps", sw_cmd->finetune_steps, "finetuning steps");
  sw->add_option("--finetune-lr", sw_cmd->finetune_lr, "finetuning learning rate");
  sw->add_option("--finetune-batch", sw_cmd->finetune_batch, "finetuning batch size");
  sw->add_option("--eval-every", sw_cmd->eval_every, "finetuning validation cadence");
  sw->add_option("--freeze-layers", sw_cmd->freeze_layers, "finetuning frozen layers");
  sw->add_flag("--parallel", sw_cmd->parallel, "run grid points concurrently");
  sw->set_config("--config", "", "key=value configuration file");
  sw->callback([&, sw_cmd] { run_sweep(*sw_cmd, args, out); });

  std::vector<const char*> cargv;
  cargv.push_back("parakit");
  for (const auto& a : args) cargv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    nlohmann::json j{{"error", "config"}, {"message", e.what()}};
    err << j.dump() << "\n";
    return error_exit_code(ErrorKind::config);
  } catch (const Error& e) {
    nlohmann::json j{{"error", error_kind_name(e.kind())}, {"message", e.what()}};
    err << j.dump() << "\n";
    return error_exit_code(e.kind());
  } catch (const std::exception& e) {
    nlohmann::json j{{"error", "internal"}, {"message", e.what()}};
    err << j.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace parakit
