#include "strokezs/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "strokezs/error.hpp"
#include "strokezs/rng.hpp"

namespace strokezs {

SplitKind parse_split_kind(std::string_view name) {
  if (name == "char-zs") return SplitKind::kCharZeroShot;
  if (name == "radical-zs") return SplitKind::kRadicalZeroShot;
  if (name == "seen") return SplitKind::kSeen;
  if (name == "cross") return SplitKind::kCrossAlphabet;
  throw UsageError("unknown split '" + std::string(name) + "' (expected char-zs, radical-zs, seen or cross)");
}

std::string split_kind_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::kCharZeroShot: return "char-zs";
    case SplitKind::kRadicalZeroShot: return "radical-zs";
    case SplitKind::kSeen: return "seen";
    case SplitKind::kCrossAlphabet: return "cross";
  }
  return "?";
}

void SplitSpec::validate() const {
  if (!zero_shot()) return;
  const std::set<std::string> train(train_classes.begin(), train_classes.end());
  for (const auto& id : test_classes)
    if (train.contains(id)) throw UsageError("zero-shot split has '" + id + "' in both train and test classes");
}

SplitSpec char_zero_shot_split(std::span<const std::string> ordered_chars, int m, int test_count) {
  if (m < 0 || test_count < 1) throw UsageError("char zero-shot split needs m >= 0 and test_count >= 1");
  const auto total = ordered_chars.size();
  if (static_cast<std::size_t>(m) + static_cast<std::size_t>(test_count) > total) {
    throw UsageError("m=" + std::to_string(m) + " plus test_count=" + std::to_string(test_count) + " exceeds " +
                     std::to_string(total) + " classes, train and test would overlap");
  }
  SplitSpec s;
  s.kind = SplitKind::kCharZeroShot;
  s.m = m;
  s.test_count = test_count;
  s.train_classes.assign(ordered_chars.begin(), ordered_chars.begin() + m);
  s.test_classes.assign(ordered_chars.end() - test_count, ordered_chars.end());
  s.validate();
  return s;
}

std::map<std::string, int> radical_frequencies(const Lexicon& lexicon) {
  std::map<std::string, int> freq;
  for (const auto& e : lexicon.entries()) {
    const std::set<std::string> distinct(e.radicals.begin(), e.radicals.end());
    for (const auto& r : distinct) ++freq[r];
  }
  return freq;
}

SplitSpec radical_zero_shot_split(const Lexicon& lexicon, int n) {
  if (n < 1) throw UsageError("radical threshold n must be >= 1");
  if (!lexicon.has_radicals()) throw DataError("lexicon carries no radical data");
  const auto freq = radical_frequencies(lexicon);
  SplitSpec s;
  s.kind = SplitKind::kRadicalZeroShot;
  s.n = n;
  for (const auto& e : lexicon.entries()) {
    const bool rare = std::any_of(e.radicals.begin(), e.radicals.end(),
                                  [&](const std::string& r) { return freq.at(r) < n; });
    (rare ? s.test_classes : s.train_classes).push_back(e.char_id);
  }
  return s;
}

std::vector<int> scaled_radical_thresholds(std::size_t alphabet_size) {
  std::vector<int> out;
  for (int n : {50, 40, 30, 20, 10}) {
    const double scaled = std::ceil(n * static_cast<double>(alphabet_size) / 3755.0);
    out.push_back(std::max(1, static_cast<int>(scaled)));
  }
  return out;
}

SplitSpec seen_split(std::span<const std::string> classes) {
  SplitSpec s;
  s.kind = SplitKind::kSeen;
  s.train_classes.assign(classes.begin(), classes.end());
  s.test_classes = s.train_classes;
  return s;
}

std::vector<std::string> build_candidate_set(const SplitSpec& split, CandidateMode mode) {
  std::set<std::string> train(split.train_classes.begin(), split.train_classes.end());
  std::set<std::string> test(split.test_classes.begin(), split.test_classes.end());
  std::vector<std::string> out;
  if (mode == CandidateMode::kUnion) {
    std::set_union(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(out));
  } else {
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(out));
  }
  return out;
}

double cacc(std::span<const std::string> predictions, std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw UsageError("cacc: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) throw UsageError("cacc of an empty evaluation");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

std::string seen_character_fallback(const StrokeSequence& rectified, const ConfusableSet& confusable,
                                    const std::string& stroke_result, std::span<const float> head_logits,
                                    std::span<const std::string> class_list) {
  if (head_logits.size() != class_list.size()) {
    throw UsageError("character head has " + std::to_string(head_logits.size()) + " outputs for " +
                     std::to_string(class_list.size()) + " classes");
  }
  if (!confusable.contains(rectified)) return stroke_result;
  const auto best = std::max_element(head_logits.begin(), head_logits.end()) - head_logits.begin();
  return class_list[static_cast<std::size_t>(best)];
}

std::string seen_character_fallback(const StrokeSequence& rectified, const ConfusableSet& confusable,
                                    const std::string& stroke_result, const FeatureMap& features,
                                    const ModelParams& params, const ModelConfig& config,
                                    std::span<const std::string> class_list) {
  if (!confusable.contains(rectified)) return stroke_result;
  const auto logits = char_head_logits(features, params, config);
  return seen_character_fallback(rectified, confusable, stroke_result, logits, class_list);
}

DatasetManifest prepare_split_dataset(const Lexicon& lexicon, const SplitSpec& split, const DataConfig& data,
                                      const std::string& dir) {
  split.validate();
  DatasetManifest manifest;
  if (!split.train_classes.empty() && data.train_per_char > 0) {
    manifest = generate_dataset(lexicon, split.train_classes, data.train_per_char, data.render, dir, "train", 0);
  }
  if (!split.test_classes.empty()) {
    auto test = generate_dataset(lexicon, split.test_classes, data.test_per_char, data.render, dir, "test",
                                 static_cast<std::size_t>(std::max(0, data.train_per_char)));
    for (auto& r : test.records) manifest.records.push_back(std::move(r));
  }
  write_manifest((std::filesystem::path(dir) / kManifestName).string(), manifest);
  write_split((std::filesystem::path(dir) / kSplitName).string(), split, data.render.image_size);
  return manifest;
}

void write_split(const std::string& path, const SplitSpec& split, int image_size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "kind\t" << split_kind_name(split.kind) << "\n";
  out << "m\t" << split.m << "\n";
  out << "test_count\t" << split.test_count << "\n";
  out << "n\t" << split.n << "\n";
  out << "seed\t" << split.seed << "\n";
  out << "image_size\t" << image_size << "\n";
  for (const auto& id : split.train_classes) out << "train\t" << id << "\n";
  for (const auto& id : split.test_classes) out << "test\t" << id << "\n";
  if (!out) throw DataError("write failed for '" + path + "'");
}

SplitSpec read_split(const std::string& path, int* image_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open split file '" + path + "'");
  SplitSpec s;
  bool have_kind = false;
  std::string line;
  std::size_t line_no = 0;
  auto number = [&](const std::string& v) {
    try {
      return std::stoll(v);
    } catch (const std::exception&) {
      throw DataError(path + ": " + ParseError(line_no, "bad number '" + v + "'").what());
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ": " + ParseError(line_no, "expected key<TAB>value").what());
    const std::string key = line.substr(0, tab), value = line.substr(tab + 1);
    if (key == "kind") {
      try {
        s.kind = parse_split_kind(value);
      } catch (const UsageError& e) {
        throw DataError(path + ": " + ParseError(line_no, e.what()).what());
      }
      have_kind = true;
    } else if (key == "m") {
      s.m = static_cast<int>(number(value));
    } else if (key == "test_count") {
      s.test_count = static_cast<int>(number(value));
    } else if (key == "n") {
      s.n = static_cast<int>(number(value));
    } else if (key == "seed") {
      s.seed = static_cast<std::uint64_t>(number(value));
    } else if (key == "image_size") {
      if (image_size != nullptr) *image_size = static_cast<int>(number(value));
    } else if (key == "train") {
      s.train_classes.push_back(value);
    } else if (key == "test") {
      s.test_classes.push_back(value);
    } else {
      throw DataError(path + ": " + ParseError(line_no, "unknown key '" + key + "'").what());
    }
  }
  if (!have_kind) throw DataError(path + ": split file has no kind line");
  try {
    s.validate();
  } catch (const UsageError& e) {
    throw DataError(path + ": " + e.what());
  }
  return s;
}

namespace {

std::string join(const std::string& dir, const std::string& rel) {
  return (std::filesystem::path(dir) / rel).string();
}

}  // namespace

std::vector<TrainingSample> load_training_samples(const Lexicon& lexicon, const SplitSpec& split,
                                                  const DatasetManifest& manifest, const std::string& dir) {
  split.validate();
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < split.train_classes.size(); ++i)
    class_index.emplace(split.train_classes[i], static_cast<int>(i));
  const std::set<std::string> test(split.test_classes.begin(), split.test_classes.end());
  std::vector<TrainingSample> out;
  for (const auto& r : manifest.records) {
    if (r.split_tag != "train") continue;
    if (split.zero_shot() && test.contains(r.char_id)) {
      throw DataError("manifest offers training sample '" + r.sample_id + "' of test class '" + r.char_id +
                      "' in a zero-shot split");
    }
    auto it = class_index.find(r.char_id);
    if (it == class_index.end()) continue;
    TrainingSample s;
    s.image = load_image(join(dir, r.path));
    s.strokes = lexicon.entry(r.char_id).strokes;
    s.class_index = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

Checkpoint train_model(const Lexicon& lexicon, const SplitSpec& split, const DatasetManifest& manifest,
                       const std::string& dir, const TrainConfig& train, const ModelConfig& config,
                       std::ostream* log) {
  config.validate();
  if (train.steps < 0 || train.batch_size < 1) throw UsageError("training needs steps >= 0 and batch_size >= 1");
  if (config.char_classes > 0 && config.char_classes != static_cast<int>(split.train_classes.size())) {
    throw UsageError("character head has " + std::to_string(config.char_classes) + " classes but the split trains " +
                     std::to_string(split.train_classes.size()));
  }
  Checkpoint ck;
  ck.config = config;
  ck.params = init_params(config, hash_combine(train.seed, hash_string("init")));
  if (train.steps == 0) return ck;

  const auto samples = load_training_samples(lexicon, split, manifest, dir);
  if (samples.empty()) throw DataError("no training samples for the split in '" + dir + "'");

  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::vector<TrainingSample> batch;
  for (int step = 0; step < train.steps; ++step) {
    batch.clear();
    while (static_cast<int>(batch.size()) < train.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(hash_combine(train.seed, ++epoch));
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(samples[order[cursor++]]);
    }
    Gradients g = sequence_gradients(batch, ck.params, config);
    if (config.char_classes > 0) {
      Gradients h = char_head_gradients(batch, ck.params, config);
      for (auto& [name, t] : h.grads) g.grads.at(name) = std::move(t);
    }
    adadelta_update(g.grads, ck.params, ck.optimizer, train.optimizer);
    if (log != nullptr && train.log_every > 0 && ((step + 1) % train.log_every == 0 || step + 1 == train.steps)) {
      *log << "step " << step + 1 << "/" << train.steps << " loss " << g.loss << "\n" << std::flush;
    }
  }
  return ck;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct EvalContext {
  const Checkpoint& model;
  const Lexicon& candidates;
  const ConfusableSet& confusable;
  const SupportBank& bank;
  const EvalConfig& config;
  const std::vector<std::string>& head_classes;
};

SamplePrediction predict_one(const EvalContext& ctx, const ManifestRecord& rec, const std::string& dir) {
  const Image image = load_image(join(dir, rec.path));
  const FeatureMap f = encode(image, ctx.model.params, ctx.model.config);
  const DecodeResult dec = greedy_decode(f, ctx.model.params, ctx.model.config);
  const CharacterDecision d =
      stroke_to_character(dec.strokes, ctx.candidates, ctx.confusable, f, ctx.bank, ctx.config.metric);
  SamplePrediction p;
  p.sample_id = rec.sample_id;
  p.gold = rec.char_id;
  p.predicted = d.char_id;
  p.decoded = dec.strokes.str();
  p.rectified = d.rectified.str();
  p.distance = d.distance;
  p.exact = d.exact;
  p.matched = d.matched;
  p.ended_by_sentinel = dec.ended_by_sentinel;
  if (ctx.config.seen_fallback) {
    const std::string fb = seen_character_fallback(d.rectified, ctx.confusable, d.char_id, f, ctx.model.params,
                                                   ctx.model.config, ctx.head_classes);
    p.fallback_changed = fb != p.predicted;
    p.predicted = fb;
  }
  return p;
}

}  // namespace

ExperimentResult evaluate(const Checkpoint& model, const Lexicon& lexicon, const SplitSpec& split,
                          const DatasetManifest& manifest, const std::string& dir, const EvalConfig& config) {
  split.validate();
  if (config.workers < 1) throw UsageError("workers must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const auto candidate_ids = build_candidate_set(split, config.candidates);
  if (candidate_ids.empty()) throw UsageError("candidate set is empty");
  const Lexicon cand_lex = lexicon.subset(candidate_ids);
  const ConfusableSet confusable = build_confusable_set(cand_lex);
  const SupportBank bank = build_support_bank(cand_lex, confusable, model.params, model.config, config.support_render);
  if (config.seen_fallback && model.config.char_classes != static_cast<int>(split.train_classes.size())) {
    throw UsageError("seen fallback needs a character head over the " + std::to_string(split.train_classes.size()) +
                     " training classes");
  }

  const std::set<std::string> test(split.test_classes.begin(), split.test_classes.end());
  std::vector<const ManifestRecord*> records;
  for (const auto& r : manifest.records) {
    if (r.split_tag != "test") continue;
    if (!test.contains(r.char_id)) {
      throw DataError("test sample '" + r.sample_id + "' belongs to class '" + r.char_id +
                      "', which is not a test class of the split");
    }
    records.push_back(&r);
  }
  if (records.empty()) throw DataError("no test samples for the split in '" + dir + "'");

  const EvalContext ctx{model, cand_lex, confusable, bank, config, split.train_classes};
  std::vector<SamplePrediction> preds(records.size());
  const int workers = std::min<int>(config.workers, static_cast<int>(records.size()));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < records.size(); i += static_cast<std::size_t>(workers))
        preds[i] = predict_one(ctx, *records[i], dir);
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResult res;
  res.split = split_kind_name(split.kind);
  res.total = preds.size();
  res.candidates = candidate_ids.size();
  res.chance = 1.0 / static_cast<double>(candidate_ids.size());
  std::vector<std::string> golds, predicted;
  for (const auto& p : preds) {
    golds.push_back(p.gold);
    predicted.push_back(p.predicted);
    res.correct += p.gold == p.predicted;
    (p.exact ? (p.matched ? res.exact_matched : res.exact_direct)
             : (p.matched ? res.rectified_matched : res.rectified_direct))++;
    res.unterminated += !p.ended_by_sentinel;
    res.fallback_changed += p.fallback_changed;
    res.stroke_correct += p.decoded == lexicon.entry(p.gold).strokes.str();
    ++res.distance_histogram[p.distance];
  }
  res.cacc = cacc(predicted, golds);
  res.predictions = std::move(preds);
  res.config = {
      {"metric", metric_name(config.metric)},
      {"candidate_mode", config.candidates == CandidateMode::kUnion ? "union" : "intersection"},
      {"seen_fallback", config.seen_fallback ? "1" : "0"},
      {"train_classes", std::to_string(split.train_classes.size())},
      {"test_classes", std::to_string(split.test_classes.size())},
      {"confusable_keys", std::to_string(confusable.size())},
      {"support_chars", std::to_string(bank.size())},
      {"channels", std::to_string(model.config.encoder.channels)},
      {"blocks", std::to_string(model.config.encoder.num_blocks)},
      {"d_model", std::to_string(model.config.decoder.d_model)},
      {"layers", std::to_string(model.config.decoder.layers)},
      {"train_steps", std::to_string(model.optimizer.steps)},
  };
  if (split.kind == SplitKind::kCharZeroShot) {
    res.config.emplace_back("m", std::to_string(split.m));
    res.config.emplace_back("test_count", std::to_string(split.test_count));
  }
  if (split.kind == SplitKind::kRadicalZeroShot) res.config.emplace_back("n", std::to_string(split.n));
  res.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

ExperimentResult run_experiment(const Lexicon& lexicon, const SplitSpec& split, const DatasetManifest& manifest,
                                const std::string& dir, const ExperimentConfig& config, Checkpoint* trained,
                                std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  Checkpoint ck = train_model(lexicon, split, manifest, dir, config.train, config.model, log);
  const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ExperimentResult res = evaluate(ck, lexicon, split, manifest, dir, config.eval);
  res.train_seconds = train_seconds;
  res.config.emplace_back("seed", std::to_string(config.train.seed));
  res.config.emplace_back("batch_size", std::to_string(config.train.batch_size));
  res.config.emplace_back("weight_decay", fixed(config.train.optimizer.weight_decay, 8));
  if (trained != nullptr) *trained = std::move(ck);
  return res;
}

ExperimentResult cross_alphabet_eval(const Checkpoint& trained_on_a, const Lexicon& lexicon_b,
                                     const SplitSpec& split_b, const DatasetManifest& manifest_b,
                                     const std::string& dir_b, const EvalConfig& config) {
  for (const auto& id : split_b.test_classes) {
    if (!lexicon_b.contains(id)) throw DataError("test class '" + id + "' is not in the target alphabet");
  }
  return evaluate(trained_on_a, lexicon_b, split_b, manifest_b, dir_b, config);
}

std::string format_result(const ExperimentResult& r) {
  std::ostringstream out;
  out << "split=" << r.split << "\n";
  out << "total=" << r.total << "\n";
  out << "correct=" << r.correct << "\n";
  out << "cacc=" << fixed(r.cacc) << "\n";
  out << "candidates=" << r.candidates << "\n";
  out << "chance=" << fixed(r.chance) << "\n";
  out << "stroke_accuracy=" << fixed(r.total ? static_cast<double>(r.stroke_correct) / r.total : 0.0) << "\n";
  out << "unterminated=" << r.unterminated << "\n";
  out << "fallback_changed=" << r.fallback_changed << "\n";
  for (const auto& [k, v] : r.config) out << "config." << k << "=" << v << "\n";
  out << "[trace]\n";
  out << "exact,direct=" << r.exact_direct << "\n";
  out << "exact,matched=" << r.exact_matched << "\n";
  out << "rectified,direct=" << r.rectified_direct << "\n";
  out << "rectified,matched=" << r.rectified_matched << "\n";
  out << "[distance_histogram]\n";
  for (const auto& [d, n] : r.distance_histogram) out << d << "=" << n << "\n";
  // Most frequent gold -> predicted mistakes.
  std::map<std::pair<std::string, std::string>, int> confusions;
  for (const auto& p : r.predictions)
    if (p.gold != p.predicted) ++confusions[{p.gold, p.predicted}];
  std::vector<std::pair<std::pair<std::string, std::string>, int>> top(confusions.begin(), confusions.end());
  std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (top.size() > 10) top.resize(10);
  out << "[confusions]\n";
  for (const auto& [pair, n] : top) out << pair.first << "->" << pair.second << "=" << n << "\n";
  return out.str();
}

std::string result_csv_header() {
  return "split,total,correct,cacc,candidates,chance,exact_direct,exact_matched,rectified_direct,"
         "rectified_matched,stroke_accuracy";
}

std::string result_csv_row(const ExperimentResult& r) {
  std::ostringstream out;
  out << r.split << "," << r.total << "," << r.correct << "," << fixed(r.cacc) << "," << r.candidates << ","
      << fixed(r.chance) << "," << r.exact_direct << "," << r.exact_matched << "," << r.rectified_direct << ","
      << r.rectified_matched << ","
      << fixed(r.total ? static_cast<double>(r.stroke_correct) / r.total : 0.0);
  return out.str();
}

void write_predictions_csv(std::ostream& out, const ExperimentResult& r) {
  out << "sample_id,gold,predicted,decoded,rectified,distance,trace,ended_by_sentinel\n";
  for (const auto& p : r.predictions) {
    out << p.sample_id << "," << p.gold << "," << p.predicted << "," << p.decoded << "," << p.rectified << ","
        << p.distance << "," << (p.exact ? "exact" : "rectified") << "/" << (p.matched ? "matched" : "direct")
        << "," << (p.ended_by_sentinel ? 1 : 0) << "\n";
  }
}

}  // namespace strokezs
