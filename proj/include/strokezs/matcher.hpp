#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "strokezs/glyphgen.hpp"
#include "strokezs/lexicon.hpp"
#include "strokezs/model.hpp"

namespace strokezs {

enum class SimilarityMetric { kEuclidean, kCosine };

// "euclidean" / "cosine"; anything else is a UsageError.
SimilarityMetric parse_metric(std::string_view name);
std::string metric_name(SimilarityMetric metric);

// Mean over spatial positions, one value per channel.
std::vector<float> pool_features(const FeatureMap& features);

// euclidean: 1 - ||x1 - x2||,  cosine: x1.x2 / (|x1| |x2|).
// Throws UsageError on a dimension mismatch or a zero vector under cosine.
double similarity(std::span<const float> x1, std::span<const float> x2, SimilarityMetric metric);

// Pooled support features per character, one vector per font variant.
class SupportBank {
 public:
  SupportBank() = default;

  // All vectors must share one dimension.
  void add(const std::string& char_id, std::vector<float> vector);

  bool contains(std::string_view char_id) const { return vectors_.find(char_id) != vectors_.end(); }
  // Throws DataError naming the id when absent.
  const std::vector<std::vector<float>>& variants(std::string_view char_id) const;
  const std::map<std::string, std::vector<std::vector<float>>, std::less<>>& vectors() const noexcept {
    return vectors_;
  }
  std::size_t size() const noexcept { return vectors_.size(); }
  int dim() const noexcept { return dim_; }

  // Record format, tensors named "<char_id>#<variant>".
  void save(const std::string& path) const;
  static SupportBank load(const std::string& path);

 private:
  std::map<std::string, std::vector<std::vector<float>>, std::less<>> vectors_;
  int dim_ = 0;
};

// Encodes both support renderings of every confusable candidate. Nothing
// else is stored: one-to-one characters never reach the matcher.
SupportBank build_support_bank(const Lexicon& lexicon, const ConfusableSet& confusable, const ModelParams& params,
                               const ModelConfig& config, const RenderConfig& render);

// Candidate with the highest mean similarity over its variants; ties go to
// the lower char_id. A single candidate is returned without touching the bank.
std::string match_confusable(std::span<const float> pooled_query, std::span<const std::string> candidates,
                             const SupportBank& bank, SimilarityMetric metric);
std::string match_confusable(const FeatureMap& features, std::span<const std::string> candidates,
                             const SupportBank& bank, SimilarityMetric metric);

struct CharacterDecision {
  std::string char_id;
  StrokeSequence rectified;
  int distance = 0;
  bool exact = true;     // prediction was already a lexicon key
  bool matched = false;  // resolved through the support bank
  std::string trace() const;  // e.g. "rectified,direct"
};

// Rectify against the lexicon, then emit the unique character or match
// within the confusable candidates.
CharacterDecision stroke_to_character(const StrokeSequence& prediction, const Lexicon& lexicon,
                                      const ConfusableSet& confusable, const FeatureMap& features,
                                      const SupportBank& bank, SimilarityMetric metric);

}  // namespace strokezs
