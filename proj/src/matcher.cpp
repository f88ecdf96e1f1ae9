#include "strokezs/matcher.hpp"

#include <cmath>

#include "strokezs/error.hpp"
#include "strokezs/record.hpp"

namespace strokezs {

SimilarityMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return SimilarityMetric::kEuclidean;
  if (name == "cosine") return SimilarityMetric::kCosine;
  throw UsageError("unknown similarity metric '" + std::string(name) + "' (expected euclidean or cosine)");
}

std::string metric_name(SimilarityMetric metric) {
  return metric == SimilarityMetric::kCosine ? "cosine" : "euclidean";
}

std::vector<float> pool_features(const FeatureMap& features) {
  if (features.rank() != 3 || features.dim(0) * features.dim(1) == 0) {
    throw UsageError("pool_features expects a non-empty H x W x C map, got " + nn::shape_string(features.shape()));
  }
  const int c = features.dim(2);
  const std::size_t positions = static_cast<std::size_t>(features.dim(0)) * features.dim(1);
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const float* f = features.ptr();
  for (std::size_t s = 0; s < positions; ++s)
    for (int k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += f[s * c + k];
  std::vector<float> out(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(acc[static_cast<std::size_t>(k)] / positions);
  return out;
}

double similarity(std::span<const float> x1, std::span<const float> x2, SimilarityMetric metric) {
  if (x1.size() != x2.size()) {
    throw UsageError("similarity: vectors of dimension " + std::to_string(x1.size()) + " and " +
                     std::to_string(x2.size()));
  }
  if (metric == SimilarityMetric::kEuclidean) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x1.size(); ++i) {
      const double d = static_cast<double>(x1[i]) - x2[i];
      d2 += d * d;
    }
    return 1.0 - std::sqrt(d2);
  }
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    dot += static_cast<double>(x1[i]) * x2[i];
    n1 += static_cast<double>(x1[i]) * x1[i];
    n2 += static_cast<double>(x2[i]) * x2[i];
  }
  // A zero vector here means a dead encoder; fail instead of scoring 0.
  if (n1 == 0.0 || n2 == 0.0) throw UsageError("cosine similarity of a zero vector");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

void SupportBank::add(const std::string& char_id, std::vector<float> vector) {
  if (vector.empty()) throw UsageError("support vector for '" + char_id + "' is empty");
  if (dim_ == 0) dim_ = static_cast<int>(vector.size());
  if (static_cast<int>(vector.size()) != dim_) {
    throw UsageError("support vector for '" + char_id + "' has dimension " + std::to_string(vector.size()) +
                     ", bank holds " + std::to_string(dim_));
  }
  vectors_[char_id].push_back(std::move(vector));
}

const std::vector<std::vector<float>>& SupportBank::variants(std::string_view char_id) const {
  auto it = vectors_.find(char_id);
  if (it == vectors_.end()) throw DataError("support bank has no entry for '" + std::string(char_id) + "'");
  return it->second;
}

void SupportBank::save(const std::string& path) const {
  std::vector<NamedTensor> records;
  for (const auto& [id, vs] : vectors_) {
    for (std::size_t v = 0; v < vs.size(); ++v) {
      records.emplace_back(id + "#" + std::to_string(v),
                           nn::Tensor({static_cast<int>(vs[v].size())}, std::vector<float>(vs[v])));
    }
  }
  write_records(path, records);
}

SupportBank SupportBank::load(const std::string& path) {
  SupportBank bank;
  for (auto& [name, t] : read_records(path)) {
    const auto hash = name.rfind('#');
    if (hash == std::string::npos || hash == 0 || t.rank() != 1) {
      throw DataError(path + ": malformed support record '" + name + "'");
    }
    try {
      bank.add(name.substr(0, hash), std::vector<float>(t.data().begin(), t.data().end()));
    } catch (const UsageError& err) {
      throw DataError(path + ": " + err.what());
    }
  }
  return bank;
}

SupportBank build_support_bank(const Lexicon& lexicon, const ConfusableSet& confusable, const ModelParams& params,
                               const ModelConfig& config, const RenderConfig& render) {
  SupportBank bank;
  for (const auto& id : confusable.all_candidates()) {
    const auto& entry = lexicon.entry(id);
    for (int variant = 0; variant < 2; ++variant)
      bank.add(id, pool_features(encode(render_support(entry, variant, render), params, config)));
  }
  return bank;
}

std::string match_confusable(std::span<const float> pooled_query, std::span<const std::string> candidates,
                             const SupportBank& bank, SimilarityMetric metric) {
  if (candidates.empty()) throw UsageError("match_confusable needs at least one candidate");
  if (candidates.size() == 1) return candidates[0];
  const std::string* best = nullptr;
  double best_score = 0.0;
  for (const auto& id : candidates) {
    const auto& variants = bank.variants(id);
    double score = 0.0;
    for (const auto& v : variants) score += similarity(pooled_query, v, metric);
    score /= static_cast<double>(variants.size());
    if (best == nullptr || score > best_score || (score == best_score && id < *best)) {
      best = &id;
      best_score = score;
    }
  }
  return *best;
}

std::string match_confusable(const FeatureMap& features, std::span<const std::string> candidates,
                             const SupportBank& bank, SimilarityMetric metric) {
  if (candidates.size() == 1) return candidates[0];
  return match_confusable(pool_features(features), candidates, bank, metric);
}

std::string CharacterDecision::trace() const {
  return std::string(exact ? "exact" : "rectified") + "," + (matched ? "matched" : "direct");
}

CharacterDecision stroke_to_character(const StrokeSequence& prediction, const Lexicon& lexicon,
                                      const ConfusableSet& confusable, const FeatureMap& features,
                                      const SupportBank& bank, SimilarityMetric metric) {
  const Rectified rec = rectify(lexicon, prediction);
  CharacterDecision out;
  out.rectified = rec.sequence;
  out.distance = rec.distance;
  out.exact = rec.distance == 0;
  if (const auto* cands = confusable.candidates(rec.sequence)) {
    out.matched = true;
    out.char_id = match_confusable(features, *cands, bank, metric);
  } else {
    const auto ids = exact_lookup(lexicon, rec.sequence);
    if (ids.size() != 1) {
      throw DataError("sequence " + rec.sequence.str() + " maps to " + std::to_string(ids.size()) +
                      " characters but is not in the confusable set");
    }
    out.char_id = ids[0];
  }
  return out;
}

}  // namespace strokezs
