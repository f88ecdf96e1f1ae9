#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "strokezs/glyphgen.hpp"
#include "strokezs/lexicon.hpp"
#include "strokezs/tensor.hpp"

namespace strokezs {

struct EncoderConfig {
  int channels = 64;
  int num_blocks = 4;
  static constexpr int kDownsample = 2;
};

struct DecoderConfig {
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int max_len = static_cast<int>(kDefaultMaxStrokes);
  int ffn = 128;
  // Five stroke classes plus the end sentinel.
  static constexpr int kVocab = 6;
  // Input-side begin token (embedding row only, never predicted).
  static constexpr int kBegin = 6;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  // Size of the optional character-classification head; 0 disables it.
  int char_classes = 0;

  // Throws UsageError on inconsistent sizes.
  void validate() const;
  friend bool operator==(const ModelConfig& a, const ModelConfig& b);
};

// Encoder output F: (H/2) x (W/2) x C.
using FeatureMap = nn::Tensor;

// Named weights, ordered by name.
using ModelParams = std::map<std::string, nn::Tensor>;

// Expected name -> shape for a config.
std::map<std::string, nn::Shape> param_shapes(const ModelConfig& config);

// Uniform fan-in initialization; each tensor draws from its own stream keyed
// by (seed, name), so adding a tensor never perturbs the others.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

FeatureMap encode(const Image& image, const ModelParams& params, const ModelConfig& config);

// Logits of shape (T+1) x 6: one row per gold stroke plus the end step.
nn::Tensor decode_teacher_forced(const FeatureMap& features, const StrokeSequence& gold,
                                 const ModelParams& params, const ModelConfig& config);

// Sum over steps of -log p(target); targets are the gold strokes followed by
// the end sentinel.
double sequence_loss(const nn::Tensor& logits, const StrokeSequence& gold);

struct DecodeResult {
  StrokeSequence strokes;
  int steps = 0;
  bool ended_by_sentinel = false;
};

DecodeResult greedy_decode(const FeatureMap& features, const ModelParams& params, const ModelConfig& config);

// Final-layer cross-attention for decoding `strokes` plus the end step: one
// heads x (H/2) x (W/2) map per step.
std::vector<nn::Tensor> attention_maps(const FeatureMap& features, const StrokeSequence& strokes,
                                       const ModelParams& params, const ModelConfig& config);

// Character-head logits over the configured classes from pooled features.
std::vector<float> char_head_logits(const FeatureMap& features, const ModelParams& params,
                                    const ModelConfig& config);

struct AdadeltaConfig {
  double rho = 0.9;
  double eps = 1e-6;
  double lr = 1.0;
  double weight_decay = 0.0;  // decoupled: x <- x - lr * wd * x
};

struct OptimizerState {
  std::map<std::string, nn::Tensor> sq_grad;
  std::map<std::string, nn::Tensor> sq_delta;
  std::int64_t steps = 0;
};

struct TrainingSample {
  Image image;
  StrokeSequence strokes;
  int class_index = -1;  // only used by the character head
};

struct Gradients {
  double loss = 0.0;  // mean over the batch
  std::map<std::string, nn::Tensor> grads;
};

// Mean sequence loss over the batch and its gradient for every parameter.
Gradients sequence_gradients(std::span<const TrainingSample> batch, const ModelParams& params,
                             const ModelConfig& config);

// Mean character-head cross entropy; only head parameters receive gradients.
Gradients char_head_gradients(std::span<const TrainingSample> batch, const ModelParams& params,
                              const ModelConfig& config);

void adadelta_update(const std::map<std::string, nn::Tensor>& grads, ModelParams& params,
                     OptimizerState& state, const AdadeltaConfig& optimizer);

// One Adadelta step on the mean sequence loss; returns that loss.
double train_step(std::span<const TrainingSample> batch, ModelParams& params, OptimizerState& state,
                  const AdadeltaConfig& optimizer, const ModelConfig& config);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  OptimizerState optimizer;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
// Reads the stored config and validates every tensor against it.
Checkpoint load_checkpoint(const std::string& path);
// As above, but the file must match `expected`; mismatches name the tensor.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace strokezs
