#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "strokezs/glyphgen.hpp"
#include "strokezs/lexicon.hpp"
#include "strokezs/matcher.hpp"
#include "strokezs/model.hpp"

namespace strokezs {

enum class SplitKind { kCharZeroShot, kRadicalZeroShot, kSeen, kCrossAlphabet };

// CLI spellings: char-zs, radical-zs, seen, cross.
SplitKind parse_split_kind(std::string_view name);
std::string split_kind_name(SplitKind kind);

struct SplitSpec {
  SplitKind kind = SplitKind::kSeen;
  std::vector<std::string> train_classes;
  std::vector<std::string> test_classes;
  std::uint64_t seed = 0;
  int m = 0;           // char zero-shot
  int test_count = 0;  // char zero-shot
  int n = 0;           // radical zero-shot threshold

  // Zero-shot kinds never train on a test class.
  bool zero_shot() const { return kind != SplitKind::kSeen; }
  // Throws UsageError when a zero-shot split shares classes.
  void validate() const;
};

// First m classes train, last test_count classes test.
SplitSpec char_zero_shot_split(std::span<const std::string> ordered_chars, int m, int test_count);

// Number of characters containing each radical (a radical repeated inside one
// character counts once).
std::map<std::string, int> radical_frequencies(const Lexicon& lexicon);

// A character is a test class iff one of its radicals occurs in fewer than n
// characters. Throws DataError when the lexicon carries no radicals.
SplitSpec radical_zero_shot_split(const Lexicon& lexicon, int n);

// {50, 40, 30, 20, 10} scaled by alphabet_size / 3755, rounded up, at least 1.
std::vector<int> scaled_radical_thresholds(std::size_t alphabet_size);

// Train and test on the same classes.
SplitSpec seen_split(std::span<const std::string> classes);

enum class CandidateMode { kUnion, kIntersection };

// Sorted, deduplicated classes a prediction may resolve to.
std::vector<std::string> build_candidate_set(const SplitSpec& split, CandidateMode mode = CandidateMode::kUnion);

// Exact-match fraction. Throws UsageError on empty or unequal inputs.
double cacc(std::span<const std::string> predictions, std::span<const std::string> golds);

// When the rectified sequence is confusable, replace the stroke result by the
// character head's argmax over class_list (ties to the lower index).
std::string seen_character_fallback(const StrokeSequence& rectified, const ConfusableSet& confusable,
                                    const std::string& stroke_result, std::span<const float> head_logits,
                                    std::span<const std::string> class_list);
std::string seen_character_fallback(const StrokeSequence& rectified, const ConfusableSet& confusable,
                                    const std::string& stroke_result, const FeatureMap& features,
                                    const ModelParams& params, const ModelConfig& config,
                                    std::span<const std::string> class_list);

struct DataConfig {
  int train_per_char = 40;
  int test_per_char = 20;
  RenderConfig render;
};

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kSplitName = "split.tsv";

// Split description stored next to a dataset: "key<TAB>value" lines for the
// kind and its parameters, then one "train"/"test" line per class.
void write_split(const std::string& path, const SplitSpec& split, int image_size);
SplitSpec read_split(const std::string& path, int* image_size = nullptr);

// Renders "train" samples for the train classes and "test" samples for the
// test classes into dir, and writes dir/manifest.tsv. Test samples use sample
// indices after the training ones, so the seen setting never tests on a
// training image. The split itself goes to dir/split.tsv.
DatasetManifest prepare_split_dataset(const Lexicon& lexicon, const SplitSpec& split, const DataConfig& data,
                                      const std::string& dir);

struct TrainConfig {
  int steps = 1000;
  int batch_size = 16;
  AdadeltaConfig optimizer;
  std::uint64_t seed = 1;
  int log_every = 0;  // 0 disables progress lines
};

// Loads the "train" records of the split's train classes. Any record of a
// test class tagged "train" in a zero-shot split is a DataError.
std::vector<TrainingSample> load_training_samples(const Lexicon& lexicon, const SplitSpec& split,
                                                  const DatasetManifest& manifest, const std::string& dir);

// Trains from scratch on the split's training samples. With
// config.char_classes > 0 the character head is trained alongside over
// split.train_classes (in that order).
Checkpoint train_model(const Lexicon& lexicon, const SplitSpec& split, const DatasetManifest& manifest,
                       const std::string& dir, const TrainConfig& train, const ModelConfig& config,
                       std::ostream* log = nullptr);

struct EvalConfig {
  SimilarityMetric metric = SimilarityMetric::kCosine;
  int workers = 1;
  bool seen_fallback = false;
  CandidateMode candidates = CandidateMode::kUnion;
  RenderConfig support_render;  // support images are always jitter free
};

struct SamplePrediction {
  std::string sample_id;
  std::string gold;
  std::string predicted;
  std::string decoded;    // raw stroke digits
  std::string rectified;  // stroke digits after rectification
  int distance = 0;
  bool exact = true;
  bool matched = false;
  bool ended_by_sentinel = true;
  bool fallback_changed = false;
};

struct ExperimentResult {
  std::string split;
  std::size_t total = 0;
  std::size_t correct = 0;
  double cacc = 0.0;
  std::size_t candidates = 0;
  double chance = 0.0;
  std::size_t exact_direct = 0;
  std::size_t exact_matched = 0;
  std::size_t rectified_direct = 0;
  std::size_t rectified_matched = 0;
  std::size_t unterminated = 0;      // decodes that hit max_len
  std::size_t fallback_changed = 0;  // seen setting only
  std::size_t stroke_correct = 0;    // decoded == gold sequence
  std::map<int, int> distance_histogram;
  std::vector<std::pair<std::string, std::string>> config;  // echo, in insertion order
  std::vector<SamplePrediction> predictions;
  // Wall clock is reported on the console only; result files stay byte-stable.
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

// Decodes every "test" record of the split's test classes and resolves it
// against the candidate lexicon. Results do not depend on config.workers.
ExperimentResult evaluate(const Checkpoint& model, const Lexicon& lexicon, const SplitSpec& split,
                          const DatasetManifest& manifest, const std::string& dir, const EvalConfig& config);

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

// Train on the split's training samples, then evaluate. The checkpoint is
// returned through `trained` when given.
ExperimentResult run_experiment(const Lexicon& lexicon, const SplitSpec& split, const DatasetManifest& manifest,
                                const std::string& dir, const ExperimentConfig& config,
                                Checkpoint* trained = nullptr, std::ostream* log = nullptr);

// Frozen model from another alphabet, evaluated with B's candidates and
// support bank. Throws DataError if B's test classes are not in lexicon_b.
ExperimentResult cross_alphabet_eval(const Checkpoint& trained_on_a, const Lexicon& lexicon_b,
                                     const SplitSpec& split_b, const DatasetManifest& manifest_b,
                                     const std::string& dir_b, const EvalConfig& config);

// key=value lines, then [trace] and [distance_histogram] blocks.
std::string format_result(const ExperimentResult& result);
std::string result_csv_header();
std::string result_csv_row(const ExperimentResult& result);
void write_predictions_csv(std::ostream& out, const ExperimentResult& result);

}  // namespace strokezs
