#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "strokezs/model.hpp"
#include "strokezs/ops.hpp"

// Tape-level builders behind the model API. Exposed so gradient checks can
// run the exact same graph in double precision.
namespace strokezs::graph {

template <typename T>
struct ParamVars {
  std::map<std::string, nn::Var> vars;
  nn::Var operator()(const std::string& name) const;
};

// Puts every parameter on the tape, as variables when `trainable`.
template <typename T>
ParamVars<T> bind_params(nn::BasicTape<T>& tape, const ModelParams& params, bool trainable);

template <typename T>
nn::Var encoder(nn::BasicTape<T>& tape, const ParamVars<T>& p, nn::Var image, const ModelConfig& config);

// Projected memory plus per-layer cross-attention keys/values.
struct Memory {
  nn::Var keys_values_source;
  std::vector<nn::Var> keys;
  std::vector<nn::Var> values;
  int height = 0;
  int width = 0;
};

template <typename T>
Memory memory(nn::BasicTape<T>& tape, const ParamVars<T>& p, nn::Var features, const ModelConfig& config);

struct DecoderOutput {
  nn::Var logits;              // T x 6
  nn::Var last_cross_weights;  // heads x T x S
};

// `tokens` starts with the begin token.
template <typename T>
DecoderOutput decoder(nn::BasicTape<T>& tape, const ParamVars<T>& p, const Memory& mem,
                      std::span<const int> tokens, const ModelConfig& config);

// Input tokens (begin + gold) and targets (gold + end) for teacher forcing.
std::vector<int> teacher_inputs(const StrokeSequence& gold);
std::vector<int> teacher_targets(const StrokeSequence& gold);

// Encoder -> decoder -> summed cross entropy for one sample.
template <typename T>
nn::Var sample_loss(nn::BasicTape<T>& tape, const ParamVars<T>& p, nn::Var image, const StrokeSequence& gold,
                    const ModelConfig& config);

}  // namespace strokezs::graph
