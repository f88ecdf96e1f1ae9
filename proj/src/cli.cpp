#include "strokezs/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>

#include "strokezs/diagnostics.hpp"
#include "strokezs/error.hpp"
#include "strokezs/eval.hpp"
#include "strokezs/glyphgen.hpp"
#include "strokezs/lexicon.hpp"
#include "strokezs/matcher.hpp"
#include "strokezs/model.hpp"

namespace strokezs::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Output files may be overwritten, but their directory must already exist.
const CLI::Validator kWritablePath(
    [](std::string& path) -> std::string {
      const fs::path parent = fs::path(path).parent_path();
      if (path.empty()) return "empty path";
      if (!parent.empty() && !fs::is_directory(parent)) return "directory '" + parent.string() + "' does not exist";
      if (fs::is_directory(path)) return "'" + path + "' is a directory";
      return {};
    },
    "OUTPUT");

const CLI::Validator kOutputDir(
    [](std::string& path) -> std::string {
      const fs::path parent = fs::absolute(path).parent_path();
      if (fs::exists(path) && !fs::is_directory(path)) return "'" + path + "' exists and is not a directory";
      if (!fs::is_directory(parent)) return "directory '" + parent.string() + "' does not exist";
      return {};
    },
    "DIR");

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("write failed for '" + path + "'");
}

struct Global {
  std::uint64_t seed = 1;
  bool json = false;
  int workers = 1;
  bool verbose = false;
};

void print_json(std::ostream& out, const Json& j) { out << j.dump(2) << "\n"; }

std::string csv_field(std::string v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void flatten(std::ostream& out, const std::string& prefix, const Json& j) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(out, prefix.empty() ? k : prefix + "." + k, v);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(out, prefix + "." + std::to_string(i), j[i]);
  } else {
    out << csv_field(prefix) << "," << csv_field(j.is_string() ? j.get<std::string>() : j.dump()) << "\n";
  }
}

// Summary results: a key,value CSV table, or JSON with --json.
void emit(std::ostream& out, const Global& g, const Json& j) {
  if (g.json) {
    print_json(out, j);
    return;
  }
  out << "key,value\n";
  flatten(out, "", j);
}

// ---- lexicon-stats

struct StatsOpts {
  std::string lexicon;
  std::string out;
};

void lexicon_stats(const StatsOpts& o, const Global& g, std::ostream& out) {
  const Lexicon lex = load_lexicon_file(o.lexicon);
  const auto hist = one_to_n_histogram(lex);
  const auto confusable = build_confusable_set(lex);
  std::size_t unique_chars = hist.contains(1) ? static_cast<std::size_t>(hist.at(1)) : 0;
  const double one_to_one = lex.empty() ? 0.0 : static_cast<double>(unique_chars) / static_cast<double>(lex.size());
  std::size_t max_len = 0;
  for (const auto& e : lex.entries()) max_len = std::max(max_len, e.strokes.size());

  if (!o.out.empty()) {
    std::string csv = "n,sequences\n";
    for (const auto& [n, count] : hist) csv += std::to_string(n) + "," + std::to_string(count) + "\n";
    write_file(o.out, csv);
  }

  std::vector<std::pair<int, std::size_t>> radical_splits;
  if (lex.has_radicals()) {
    for (int n : scaled_radical_thresholds(lex.size()))
      radical_splits.emplace_back(n, radical_zero_shot_split(lex, n).test_classes.size());
  }

  Json j;
  j["entries"] = lex.size();
  j["sequences"] = lex.index().size();
  j["confusable_sequences"] = confusable.size();
  j["confusable_characters"] = confusable.all_candidates().size();
  j["one_to_one_fraction"] = one_to_one;
  j["max_strokes"] = max_len;
  j["max_n"] = hist.empty() ? 0 : hist.rbegin()->first;
  Json h = Json::object();
  for (const auto& [n, count] : hist) h[std::to_string(n)] = count;
  j["one_to_n"] = h;
  if (!radical_splits.empty()) {
    Json r = Json::object();
    for (const auto& [n, tests] : radical_splits) r[std::to_string(n)] = tests;
    j["radical_zs_test_classes"] = r;
  }
  emit(out, g, j);
}

// ---- synth-lexicon

struct SynthOpts {
  std::string out;
  AlphabetConfig alphabet;
  std::string exclude;
};

void synth_lexicon(SynthOpts o, const Global& g, std::ostream& out) {
  o.alphabet.seed = g.seed;
  if (!o.exclude.empty()) {
    for (const auto& e : load_lexicon_file(o.exclude).entries()) o.alphabet.excluded.insert(e.strokes);
  }
  const Lexicon lex = make_synthetic_alphabet(o.alphabet);
  std::ostringstream text;
  write_lexicon(text, lex);
  write_file(o.out, text.str());
  emit(out, g, {{"path", o.out}, {"entries", lex.size()}, {"sequences", lex.index().size()}});
}

// ---- gen-data

struct GenOpts {
  std::string lexicon;
  std::string out;
  std::string split = "char-zs";
  int m = -1;
  int test_count = -1;
  int n = -1;
  int train_per_char = 40;
  int test_per_char = 20;
  int image_size = 32;
};

SplitSpec make_split(const GenOpts& o, const Lexicon& lex) {
  std::vector<std::string> ids;
  for (const auto& e : lex.entries()) ids.push_back(e.char_id);
  const int total = static_cast<int>(ids.size());
  switch (parse_split_kind(o.split)) {
    case SplitKind::kCharZeroShot: {
      const int test = o.test_count >= 0 ? o.test_count : total / 5;
      const int m = o.m >= 0 ? o.m : total - test;
      return char_zero_shot_split(ids, m, test);
    }
    case SplitKind::kRadicalZeroShot:
      if (o.n < 0) throw UsageError("--n is required for --split radical-zs");
      return radical_zero_shot_split(lex, o.n);
    case SplitKind::kSeen:
      return seen_split(ids);
    case SplitKind::kCrossAlphabet: {
      SplitSpec s;
      s.kind = SplitKind::kCrossAlphabet;
      const int test = o.test_count >= 0 ? o.test_count : total;
      if (test < 1 || test > total) throw UsageError("--test-count must be in 1.." + std::to_string(total));
      s.test_count = test;
      s.test_classes.assign(ids.end() - test, ids.end());
      return s;
    }
  }
  throw UsageError("unhandled split");
}

void gen_data(const GenOpts& o, const Global& g, std::ostream& out) {
  if (o.train_per_char < 0 || o.test_per_char < 1) throw UsageError("--test-per-char must be >= 1 and --train-per-char >= 0");
  const Lexicon lex = load_lexicon_file(o.lexicon);
  SplitSpec split = make_split(o, lex);
  split.seed = g.seed;
  DataConfig data;
  data.train_per_char = o.train_per_char;
  data.test_per_char = o.test_per_char;
  data.render.image_size = o.image_size;
  data.render.seed = g.seed;
  data.render.validate();
  fs::create_directories(o.out);
  const auto manifest = prepare_split_dataset(lex, split, data, o.out);
  std::size_t train = 0;
  for (const auto& r : manifest.records) train += r.split_tag == "train";
  const std::size_t test = manifest.records.size() - train;
  emit(out, g, {{"split", split_kind_name(split.kind)},
                {"train_classes", split.train_classes.size()},
                {"test_classes", split.test_classes.size()},
                {"train_samples", train},
                {"test_samples", test},
                {"dir", o.out}});
}

// ---- train

struct TrainOpts {
  std::string lexicon;
  std::string data;
  std::string out;
  int steps = 1000;
  int batch_size = 16;
  int channels = 64;
  int blocks = 4;
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int ffn = 128;
  double weight_decay = -1.0;  // negative: 1e-4 for zero-shot splits, 0 otherwise
  bool char_head = false;
  int log_every = 0;
};

struct DataDir {
  SplitSpec split;
  DatasetManifest manifest;
  int image_size = 32;
};

DataDir load_data_dir(const std::string& dir) {
  DataDir d;
  d.split = read_split((fs::path(dir) / kSplitName).string(), &d.image_size);
  d.manifest = read_manifest((fs::path(dir) / kManifestName).string());
  return d;
}

void train(const TrainOpts& o, const Global& g, std::ostream& out, std::ostream& err) {
  if (o.steps < 0 || o.batch_size < 1) throw UsageError("--steps must be >= 0 and --batch-size >= 1");
  const Lexicon lex = load_lexicon_file(o.lexicon);
  const DataDir data = load_data_dir(o.data);
  ModelConfig mc;
  mc.encoder.channels = o.channels;
  mc.encoder.num_blocks = o.blocks;
  mc.decoder.d_model = o.d_model;
  mc.decoder.heads = o.heads;
  mc.decoder.layers = o.layers;
  mc.decoder.ffn = o.ffn;
  if (o.char_head) mc.char_classes = static_cast<int>(data.split.train_classes.size());
  mc.validate();
  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch_size;
  tc.seed = g.seed;
  tc.log_every = o.log_every;
  tc.optimizer.weight_decay = o.weight_decay >= 0 ? o.weight_decay : (data.split.zero_shot() ? 1e-4 : 0.0);

  const auto start = std::chrono::steady_clock::now();
  const Checkpoint ck = train_model(lex, data.split, data.manifest, o.data, tc, mc, o.log_every > 0 ? &err : nullptr);
  save_checkpoint(o.out, ck);
  if (g.verbose) {
    err << "training took " << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1)
        << "s\n";
  }
  std::size_t count = 0;
  for (const auto& [name, t] : ck.params) count += t.size();
  emit(out, g, {{"checkpoint", o.out}, {"steps", ck.optimizer.steps}, {"parameters", count},
                {"weight_decay", tc.optimizer.weight_decay}});
}

// ---- eval

struct EvalOpts {
  std::string checkpoint;
  std::string lexicon;
  std::string data;
  std::string split;
  std::string metric = "cosine";
  std::string candidates = "union";
  bool fallback = false;
  std::string out;
  std::string csv;
  std::string predictions;
};

Json result_json(const ExperimentResult& r) {
  Json j;
  j["split"] = r.split;
  j["total"] = r.total;
  j["correct"] = r.correct;
  j["cacc"] = r.cacc;
  j["candidates"] = r.candidates;
  j["chance"] = r.chance;
  j["stroke_correct"] = r.stroke_correct;
  j["unterminated"] = r.unterminated;
  j["fallback_changed"] = r.fallback_changed;
  j["trace"] = {{"exact,direct", r.exact_direct},
                {"exact,matched", r.exact_matched},
                {"rectified,direct", r.rectified_direct},
                {"rectified,matched", r.rectified_matched}};
  Json h = Json::object();
  for (const auto& [d, c] : r.distance_histogram) h[std::to_string(d)] = c;
  j["distance_histogram"] = h;
  Json c = Json::object();
  for (const auto& [k, v] : r.config) c[k] = v;
  j["config"] = c;
  return j;
}

void eval(const EvalOpts& o, const Global& g, std::ostream& out, std::ostream& err) {
  const SplitKind kind = parse_split_kind(o.split);
  EvalConfig ec;
  ec.metric = parse_metric(o.metric);
  ec.workers = g.workers;
  ec.seen_fallback = o.fallback;
  if (o.candidates == "union") {
    ec.candidates = CandidateMode::kUnion;
  } else if (o.candidates == "intersection") {
    ec.candidates = CandidateMode::kIntersection;
  } else {
    throw UsageError("--candidates must be union or intersection, got '" + o.candidates + "'");
  }
  const Lexicon lex = load_lexicon_file(o.lexicon);
  const DataDir data = load_data_dir(o.data);
  if (data.split.kind != kind) {
    throw UsageError("--split " + o.split + " does not match the " + split_kind_name(data.split.kind) +
                     " split stored in '" + o.data + "'");
  }
  if (o.fallback && kind != SplitKind::kSeen) throw UsageError("--fallback only applies to --split seen");
  ec.support_render.image_size = data.image_size;
  const Checkpoint ck = load_checkpoint(o.checkpoint);

  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult r = kind == SplitKind::kCrossAlphabet
                                 ? cross_alphabet_eval(ck, lex, data.split, data.manifest, o.data, ec)
                                 : evaluate(ck, lex, data.split, data.manifest, o.data, ec);
  if (g.verbose) {
    err << "evaluation took " << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1)
        << "s\n";
  }
  if (!o.out.empty()) write_file(o.out, format_result(r));
  if (!o.csv.empty()) write_file(o.csv, result_csv_header() + "\n" + result_csv_row(r) + "\n");
  if (!o.predictions.empty()) {
    std::ostringstream p;
    write_predictions_csv(p, r);
    write_file(o.predictions, p.str());
  }
  if (g.json) {
    print_json(out, result_json(r));
  } else {
    out << result_csv_header() << "\n" << result_csv_row(r) << "\n";
  }
}

// ---- decode

struct DecodeOpts {
  std::string checkpoint;
  std::string lexicon;
  std::string image;
  std::string bank;
  std::string metric = "cosine";
};

void decode(const DecodeOpts& o, const Global& g, std::ostream& out) {
  const SimilarityMetric metric = parse_metric(o.metric);
  const Lexicon lex = load_lexicon_file(o.lexicon);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Image image = load_image(o.image);
  const auto confusable = build_confusable_set(lex);
  SupportBank bank;
  if (!o.bank.empty()) {
    bank = SupportBank::load(o.bank);
  } else {
    RenderConfig rc;
    rc.image_size = image.dim(0);
    bank = build_support_bank(lex, confusable, ck.params, ck.config, rc);
  }
  const FeatureMap f = encode(image, ck.params, ck.config);
  const DecodeResult dr = greedy_decode(f, ck.params, ck.config);
  const CharacterDecision d = stroke_to_character(dr.strokes, lex, confusable, f, bank, metric);
  if (g.json) {
    print_json(out, {{"char_id", d.char_id},
                     {"strokes", dr.strokes.str()},
                     {"rectified", d.rectified.str()},
                     {"distance", d.distance},
                     {"trace", d.trace()},
                     {"ended_by_sentinel", dr.ended_by_sentinel}});
  } else {
    out << csv_field(d.char_id) << "," << dr.strokes.str() << "," << csv_field(d.trace()) << "\n";
  }
}

// ---- export-bank

struct BankOpts {
  std::string checkpoint;
  std::string lexicon;
  std::string out;
  int image_size = 32;
};

void export_bank(const BankOpts& o, const Global& g, std::ostream& out) {
  const Lexicon lex = load_lexicon_file(o.lexicon);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RenderConfig rc;
  rc.image_size = o.image_size;
  rc.validate();
  const auto bank = build_support_bank(lex, build_confusable_set(lex), ck.params, ck.config, rc);
  bank.save(o.out);
  emit(out, g, {{"path", o.out}, {"characters", bank.size()}, {"dim", bank.dim()}});
}

// ---- grad-check

int grad_check(const Global& g, std::ostream& out) {
  const auto rows = run_grad_checks(g.seed);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.passed(); });
  if (g.json) {
    Json arr = Json::array();
    for (const auto& r : rows)
      arr.push_back({{"name", r.name}, {"error", r.error}, {"tolerance", r.tolerance}, {"passed", r.passed()}});
    print_json(out, {{"passed", ok}, {"checks", arr}});
  } else {
    char buf[64];
    out << "check,max_relative_error,tolerance,passed\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.3e,%.0e", r.error, r.tolerance);
      out << csv_field(r.name) << "," << buf << "," << (r.passed() ? 1 : 0) << "\n";
    }
  }
  return ok ? kOk : kRuntime;
}

// ---- export-attn

struct AttnOpts {
  std::string checkpoint;
  std::string image;
  std::string out;
};

void export_attn(const AttnOpts& o, const Global& g, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Image image = load_image(o.image);
  const FeatureMap f = encode(image, ck.params, ck.config);
  const DecodeResult dr = greedy_decode(f, ck.params, ck.config);
  const auto maps = attention_maps(f, dr.strokes, ck.params, ck.config);
  std::ostringstream csv;
  csv << "step,token,head,row,col,weight\n";
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const std::string token = s < dr.strokes.size() ? std::to_string(dr.strokes[s]) : "end";
    const auto& m = maps[s];
    const int heads = m.dim(0), h = m.dim(1), w = m.dim(2);
    for (int hd = 0; hd < heads; ++hd)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          csv << s << "," << token << "," << hd << "," << y << "," << x << ","
              << num(m[static_cast<std::size_t>((hd * h + y) * w + x)], 7) << "\n";
  }
  if (o.out.empty() && !g.json) {
    out << csv.str();
    return;
  }
  if (!o.out.empty()) write_file(o.out, csv.str());
  emit(out, g, {{"strokes", dr.strokes.str()}, {"steps", maps.size()},
                {"rows", maps.empty() ? 0 : maps[0].dim(1)}, {"cols", maps.empty() ? 0 : maps[0].dim(2)}});
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot character recognition through stroke sequences.", "strokezs"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "Random seed (default 1)")->envname("STROKEZS_SEED");
  app.add_flag("--json", g.json, "Print results as JSON");
  app.add_option("--workers", g.workers, "Evaluation threads")->check(CLI::Range(1, 256));
  app.add_flag("-v,--verbose", g.verbose, "Timing on stderr");

  StatsOpts stats;
  auto* c_stats = app.add_subcommand("lexicon-stats", "Sequence-sharing statistics of a lexicon");
  c_stats->add_option("--lexicon", stats.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_stats->add_option("--out", stats.out, "Write the one-to-n histogram CSV here")->check(kWritablePath);

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth-lexicon", "Write a synthetic alphabet");
  c_synth->add_option("--out", synth.out, "Output lexicon TSV")->required()->check(kWritablePath);
  c_synth->add_option("--count", synth.alphabet.count, "Characters")->check(CLI::PositiveNumber);
  c_synth->add_option("--radicals", synth.alphabet.num_radicals, "Radical inventory")->check(CLI::PositiveNumber);
  c_synth->add_option("--min-parts", synth.alphabet.min_parts, "Radicals per character, minimum");
  c_synth->add_option("--max-parts", synth.alphabet.max_parts, "Radicals per character, maximum");
  c_synth->add_option("--max-radical-strokes", synth.alphabet.max_radical_strokes, "Strokes per radical, maximum");
  c_synth->add_option("--prefix", synth.alphabet.id_prefix, "char_id prefix");
  c_synth->add_option("--exclude", synth.exclude, "Never reuse this lexicon's sequences")->check(CLI::ExistingFile);

  GenOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "Render a split dataset");
  c_gen->add_option("--lexicon", gen.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output directory")->required()->check(kOutputDir);
  c_gen->add_option("--split", gen.split, "char-zs | radical-zs | seen | cross")
      ->check(CLI::IsMember({"char-zs", "radical-zs", "seen", "cross"}));
  c_gen->add_option("--m", gen.m, "char-zs: training classes (default: all but the test classes)");
  c_gen->add_option("--test-count", gen.test_count, "char-zs/cross: test classes (default: a fifth / all)");
  c_gen->add_option("--n", gen.n, "radical-zs: frequency threshold");
  c_gen->add_option("--train-per-char", gen.train_per_char, "Training samples per class");
  c_gen->add_option("--test-per-char", gen.test_per_char, "Test samples per class");
  c_gen->add_option("--image-size", gen.image_size, "Image side in pixels");

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train a model on a dataset directory");
  c_train->add_option("--lexicon", tr.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_train->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", tr.out, "Checkpoint path")->required()->check(kWritablePath);
  c_train->add_option("--steps", tr.steps, "Optimizer steps");
  c_train->add_option("--batch-size", tr.batch_size, "Samples per step");
  c_train->add_option("--channels", tr.channels, "Encoder channels");
  c_train->add_option("--blocks", tr.blocks, "Encoder residual blocks");
  c_train->add_option("--d-model", tr.d_model, "Decoder width");
  c_train->add_option("--heads", tr.heads, "Attention heads");
  c_train->add_option("--layers", tr.layers, "Decoder layers");
  c_train->add_option("--ffn", tr.ffn, "Decoder feed-forward width");
  c_train->add_option("--weight-decay", tr.weight_decay, "Default 1e-4 for zero-shot splits, else 0");
  c_train->add_flag("--char-head", tr.char_head, "Also train a character head over the training classes");
  c_train->add_option("--log-every", tr.log_every, "Progress line every N steps on stderr");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--lexicon", ev.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", ev.split, "char-zs | radical-zs | seen | cross")
      ->required()
      ->check(CLI::IsMember({"char-zs", "radical-zs", "seen", "cross"}));
  c_eval->add_option("--metric", ev.metric, "cosine | euclidean")->check(CLI::IsMember({"cosine", "euclidean"}));
  c_eval->add_option("--candidates", ev.candidates, "union | intersection")
      ->check(CLI::IsMember({"union", "intersection"}));
  c_eval->add_flag("--fallback", ev.fallback, "seen: resolve confusable sequences with the character head");
  c_eval->add_option("--out", ev.out, "Result report")->check(kWritablePath);
  c_eval->add_option("--csv", ev.csv, "Result CSV")->check(kWritablePath);
  c_eval->add_option("--predictions", ev.predictions, "Per-sample CSV")->check(kWritablePath);

  DecodeOpts dc;
  auto* c_decode = app.add_subcommand("decode", "Recognize one image");
  c_decode->add_option("--checkpoint", dc.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_decode->add_option("--lexicon", dc.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_decode->add_option("--image", dc.image, "Image record")->required()->check(CLI::ExistingFile);
  c_decode->add_option("--bank", dc.bank, "Support bank (built from the lexicon if absent)")
      ->check(CLI::ExistingFile);
  c_decode->add_option("--metric", dc.metric, "cosine | euclidean")->check(CLI::IsMember({"cosine", "euclidean"}));

  BankOpts bk;
  auto* c_bank = app.add_subcommand("export-bank", "Encode and save the support bank of a lexicon");
  c_bank->add_option("--checkpoint", bk.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_bank->add_option("--lexicon", bk.lexicon, "Lexicon TSV")->required()->check(CLI::ExistingFile);
  c_bank->add_option("--out", bk.out, "Bank path")->required()->check(kWritablePath);
  c_bank->add_option("--image-size", bk.image_size, "Support image side");

  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");

  AttnOpts at;
  auto* c_attn = app.add_subcommand("export-attn", "Decode an image and dump cross-attention maps as CSV");
  c_attn->add_option("--checkpoint", at.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_attn->add_option("--image", at.image, "Image record")->required()->check(CLI::ExistingFile);
  c_attn->add_option("--out", at.out, "CSV path (stdout if absent)")->check(kWritablePath);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  // CLI11 reports a stray word as a missing subcommand; name it instead.
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--seed" || a == "--workers") {
      ++i;
      continue;
    }
    if (a.starts_with("-")) continue;
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == a;
    if (!known) {
      err << "strokezs: error: unknown command '" << a << "'\n" << app.help();
      return kUsage;
    }
    break;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "strokezs: error: " << msg << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kUsage;
  }

  try {
    if (c_stats->parsed()) lexicon_stats(stats, g, out);
    if (c_synth->parsed()) synth_lexicon(synth, g, out);
    if (c_gen->parsed()) gen_data(gen, g, out);
    if (c_train->parsed()) train(tr, g, out, err);
    if (c_eval->parsed()) eval(ev, g, out, err);
    if (c_decode->parsed()) decode(dc, g, out);
    if (c_bank->parsed()) export_bank(bk, g, out);
    if (c_grad->parsed()) return grad_check(g, out);
    if (c_attn->parsed()) export_attn(at, g, out);
  } catch (const UsageError& e) {
    err << "strokezs: error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "strokezs: data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "strokezs: data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "strokezs: runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace strokezs::cli
