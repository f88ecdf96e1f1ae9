#include "strokezs/model.hpp"

#include <algorithm>
#include <cmath>

#include "strokezs/error.hpp"
#include "strokezs/model_graph.hpp"
#include "strokezs/record.hpp"
#include "strokezs/rng.hpp"

namespace strokezs {

using nn::Shape;
using nn::Tensor;
using nn::Var;

void ModelConfig::validate() const {
  if (encoder.channels < 8) throw UsageError("encoder channels must be >= 8");
  if (encoder.num_blocks < 0) throw UsageError("encoder num_blocks must be >= 0");
  if (decoder.d_model < 4 || decoder.d_model % 4 != 0)
    throw UsageError("decoder d_model must be a positive multiple of 4");
  if (decoder.heads < 1 || decoder.d_model % decoder.heads != 0) {
    throw UsageError("decoder d_model " + std::to_string(decoder.d_model) + " not divisible by " +
                     std::to_string(decoder.heads) + " heads");
  }
  if (decoder.layers < 1) throw UsageError("decoder needs at least one layer");
  if (decoder.max_len < 2) throw UsageError("decoder max_len must be >= 2");
  if (decoder.ffn < 1) throw UsageError("decoder ffn width must be positive");
  if (char_classes < 0) throw UsageError("char_classes must be >= 0");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.encoder.channels == b.encoder.channels && a.encoder.num_blocks == b.encoder.num_blocks &&
         a.decoder.d_model == b.decoder.d_model && a.decoder.heads == b.decoder.heads &&
         a.decoder.layers == b.decoder.layers && a.decoder.max_len == b.decoder.max_len &&
         a.decoder.ffn == b.decoder.ffn && a.char_classes == b.char_classes;
}

std::map<std::string, Shape> param_shapes(const ModelConfig& config) {
  config.validate();
  const int c = config.encoder.channels;
  const int d = config.decoder.d_model;
  const int f = config.decoder.ffn;
  std::map<std::string, Shape> s;
  s["enc.stem.w"] = {3, 3, 3, c};
  s["enc.stem.b"] = {c};
  for (int i = 0; i < config.encoder.num_blocks; ++i) {
    const std::string b = "enc.block" + std::to_string(i);
    s[b + ".conv1.w"] = {3, 3, c, c};
    s[b + ".conv1.b"] = {c};
    s[b + ".conv2.w"] = {3, 3, c, c};
    s[b + ".conv2.b"] = {c};
  }
  s["enc.down.w"] = {3, 3, c, c};
  s["enc.down.b"] = {c};
  s["dec.mem.w"] = {c, d};
  s["dec.mem.b"] = {d};
  s["dec.mem_ln.g"] = {d};
  s["dec.mem_ln.b"] = {d};
  s["dec.tok"] = {DecoderConfig::kVocab + 1, d};
  s["dec.pos"] = {config.decoder.max_len, d};
  for (int l = 0; l < config.decoder.layers; ++l) {
    const std::string p = "dec.layer" + std::to_string(l);
    for (const char* att : {".self", ".cross"}) {
      for (const char* m : {".wq", ".wk", ".wv", ".wo"}) s[p + att + m] = {d, d};
      for (const char* m : {".bq", ".bk", ".bv", ".bo"}) s[p + att + m] = {d};
    }
    for (const char* ln : {".ln1", ".ln2", ".ln3"}) {
      s[p + ln + ".g"] = {d};
      s[p + ln + ".b"] = {d};
    }
    s[p + ".ff1.w"] = {d, f};
    s[p + ".ff1.b"] = {f};
    s[p + ".ff2.w"] = {f, d};
    s[p + ".ff2.b"] = {d};
  }
  s["dec.lnf.g"] = {d};
  s["dec.lnf.b"] = {d};
  s["dec.out.w"] = {d, DecoderConfig::kVocab};
  s["dec.out.b"] = {DecoderConfig::kVocab};
  if (config.char_classes > 0) {
    s["head.w"] = {c, config.char_classes};
    s["head.b"] = {config.char_classes};
  }
  return s;
}

namespace {

// Conv kernels are stored at unit fan-in scale and multiplied by this at run
// time. Adadelta takes steps of similar size on every weight, so without it
// wide layers move their outputs by O(fan_in) per step and the residual stack
// blows up.
double conv_weight_scale(int in_channels) { return 1.0 / std::sqrt(9.0 * in_channels); }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params;
  for (const auto& [name, shape] : param_shapes(config)) {
    Tensor t(shape);
    Rng rng(hash_combine(seed, hash_string(name)));
    double bound = 0.0;
    if (ends_with(name, ".g")) {
      t.fill(1.0f);
    } else if (name == "dec.tok") {
      bound = 1.0;
    } else if (name == "dec.pos") {
      bound = 0.3;
    } else if (shape.size() == 4) {
      const double fan_in = 9.0 * shape[2];
      // Residual branches start damped so the identity path dominates.
      const double gain = ends_with(name, ".conv2.w") ? 0.5 : std::sqrt(2.0);
      bound = gain * std::sqrt(3.0 / fan_in) / conv_weight_scale(static_cast<int>(shape[2]));
    } else if (shape.size() == 2) {
      bound = std::sqrt(3.0 / shape[0]);
    }
    if (bound > 0.0)
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    params.emplace(name, std::move(t));
  }
  return params;
}

namespace graph {

template <typename T>
Var ParamVars<T>::operator()(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw UsageError("missing model parameter '" + name + "'");
  return it->second;
}

template <typename T>
ParamVars<T> bind_params(nn::BasicTape<T>& tape, const ModelParams& params, bool trainable) {
  ParamVars<T> out;
  for (const auto& [name, t] : params) {
    nn::BasicTensor<T> value;
    if constexpr (std::is_same_v<T, float>) {
      value = t;
    } else {
      value = t.template cast<T>();
    }
    out.vars.emplace(name, trainable ? tape.variable(std::move(value)) : tape.constant(std::move(value)));
  }
  return out;
}

template <typename T>
Var encoder(nn::BasicTape<T>& tape, const ParamVars<T>& p, Var image, const ModelConfig& config) {
  const auto& img = tape.value(image);
  if (img.rank() != 3 || img.dim(2) != 3) {
    throw UsageError("encoder expects an H x W x 3 image, got " + nn::shape_string(img.shape()));
  }
  if (img.dim(0) % 2 != 0 || img.dim(1) % 2 != 0) {
    throw UsageError("encoder needs even image dimensions, got " + nn::shape_string(img.shape()));
  }
  auto conv = [&](Var x, const std::string& name, int stride) {
    const Var k = nn::scale(tape, p(name + ".w"), static_cast<T>(conv_weight_scale(tape.value(x).dim(2))));
    return nn::add_bias(tape, nn::conv2d(tape, x, k, stride), p(name + ".b"));
  };
  Var x = nn::relu(tape, conv(image, "enc.stem", 1));
  for (int i = 0; i < config.encoder.num_blocks; ++i) {
    const std::string b = "enc.block" + std::to_string(i);
    Var h = nn::relu(tape, conv(x, b + ".conv1", 1));
    h = conv(h, b + ".conv2", 1);
    x = nn::relu(tape, nn::add(tape, x, h));
  }
  return nn::relu(tape, conv(x, "enc.down", EncoderConfig::kDownsample));
}

template <typename T>
Memory memory(nn::BasicTape<T>& tape, const ParamVars<T>& p, Var features, const ModelConfig& config) {
  const auto& f = tape.value(features);
  if (f.rank() != 3 || f.dim(2) != config.encoder.channels) {
    throw UsageError("feature map " + nn::shape_string(f.shape()) + " does not match encoder channels " +
                     std::to_string(config.encoder.channels));
  }
  Memory mem;
  mem.height = f.dim(0);
  mem.width = f.dim(1);
  const int s = mem.height * mem.width;
  const int d = config.decoder.d_model;
  Var flat = nn::reshape(tape, features, {s, f.dim(2)});
  Var proj = nn::linear(tape, flat, p("dec.mem.w"), p("dec.mem.b"));
  Tensor pos = nn::sinusoid_2d(mem.height, mem.width, d);
  nn::BasicTensor<T> pos_t;
  if constexpr (std::is_same_v<T, float>) {
    pos_t = std::move(pos);
  } else {
    pos_t = pos.template cast<T>();
  }
  proj = nn::add(tape, proj, tape.constant(std::move(pos_t)));
  mem.keys_values_source = nn::layer_norm(tape, proj, p("dec.mem_ln.g"), p("dec.mem_ln.b"));
  for (int l = 0; l < config.decoder.layers; ++l) {
    const std::string c = "dec.layer" + std::to_string(l) + ".cross";
    mem.keys.push_back(nn::linear(tape, mem.keys_values_source, p(c + ".wk"), p(c + ".bk")));
    mem.values.push_back(nn::linear(tape, mem.keys_values_source, p(c + ".wv"), p(c + ".bv")));
  }
  return mem;
}

template <typename T>
DecoderOutput decoder(nn::BasicTape<T>& tape, const ParamVars<T>& p, const Memory& mem,
                      std::span<const int> tokens, const ModelConfig& config) {
  const auto& dc = config.decoder;
  const int steps = static_cast<int>(tokens.size());
  if (steps < 1 || steps > dc.max_len) {
    throw UsageError("decoder input of " + std::to_string(steps) + " tokens outside 1.." +
                     std::to_string(dc.max_len));
  }
  std::vector<int> positions(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) positions[static_cast<std::size_t>(i)] = i;
  Var x = nn::add(tape, nn::embedding(tape, p("dec.tok"), tokens), nn::embedding(tape, p("dec.pos"), positions));
  Var cross_weights;
  for (int l = 0; l < dc.layers; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l);
    auto ln = [&](Var v, const char* which) {
      return nn::layer_norm(tape, v, p(pre + which + ".g"), p(pre + which + ".b"));
    };
    const std::string s = pre + ".self";
    nn::AttentionParams self{p(s + ".wq"), p(s + ".bq"), p(s + ".wk"), p(s + ".bk"),
                             p(s + ".wv"), p(s + ".bv"), p(s + ".wo"), p(s + ".bo")};
    Var h = ln(x, ".ln1");
    x = nn::add(tape, x, nn::multi_head_attention(tape, h, h, h, self, dc.heads, true).output);

    const std::string c = pre + ".cross";
    h = ln(x, ".ln2");
    Var q = nn::linear(tape, h, p(c + ".wq"), p(c + ".bq"));
    nn::AttentionResult att =
        nn::attention_core(tape, q, mem.keys[static_cast<std::size_t>(l)], mem.values[static_cast<std::size_t>(l)],
                           dc.heads, false);
    x = nn::add(tape, x, nn::linear(tape, att.output, p(c + ".wo"), p(c + ".bo")));
    cross_weights = att.weights;

    h = ln(x, ".ln3");
    h = nn::relu(tape, nn::linear(tape, h, p(pre + ".ff1.w"), p(pre + ".ff1.b")));
    x = nn::add(tape, x, nn::linear(tape, h, p(pre + ".ff2.w"), p(pre + ".ff2.b")));
  }
  x = nn::layer_norm(tape, x, p("dec.lnf.g"), p("dec.lnf.b"));
  return {nn::linear(tape, x, p("dec.out.w"), p("dec.out.b")), cross_weights};
}

std::vector<int> teacher_inputs(const StrokeSequence& gold) {
  std::vector<int> in{DecoderConfig::kBegin};
  for (auto c : gold.codes()) in.push_back(c);
  return in;
}

std::vector<int> teacher_targets(const StrokeSequence& gold) {
  std::vector<int> out(gold.codes().begin(), gold.codes().end());
  out.push_back(static_cast<int>(Stroke::kEnd));
  return out;
}

template <typename T>
Var sample_loss(nn::BasicTape<T>& tape, const ParamVars<T>& p, Var image, const StrokeSequence& gold,
                const ModelConfig& config) {
  if (static_cast<int>(gold.size()) + 1 > config.decoder.max_len) {
    throw UsageError("gold sequence of length " + std::to_string(gold.size()) + " exceeds decoder max_len");
  }
  const Var f = encoder(tape, p, image, config);
  const Memory mem = memory(tape, p, f, config);
  const auto in = teacher_inputs(gold);
  const auto tgt = teacher_targets(gold);
  const DecoderOutput out = decoder(tape, p, mem, in, config);
  return nn::cross_entropy_rows(tape, out.logits, tgt);
}

#define STROKEZS_INSTANTIATE(T)                                                                           \
  template struct ParamVars<T>;                                                                           \
  template ParamVars<T> bind_params<T>(nn::BasicTape<T>&, const ModelParams&, bool);                      \
  template Var encoder<T>(nn::BasicTape<T>&, const ParamVars<T>&, Var, const ModelConfig&);              \
  template Memory memory<T>(nn::BasicTape<T>&, const ParamVars<T>&, Var, const ModelConfig&);            \
  template DecoderOutput decoder<T>(nn::BasicTape<T>&, const ParamVars<T>&, const Memory&,               \
                                    std::span<const int>, const ModelConfig&);                            \
  template Var sample_loss<T>(nn::BasicTape<T>&, const ParamVars<T>&, Var, const StrokeSequence&,        \
                              const ModelConfig&);

STROKEZS_INSTANTIATE(float)
STROKEZS_INSTANTIATE(double)

#undef STROKEZS_INSTANTIATE

}  // namespace graph

namespace {

void check_image(const Image& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw UsageError("expected an H x W x 3 image, got " + nn::shape_string(image.shape()));
  }
}

void check_params(const ModelParams& params, const ModelConfig& config) {
  for (const auto& [name, shape] : param_shapes(config)) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("missing model parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw UsageError("parameter '" + name + "' has shape " + nn::shape_string(it->second.shape()) +
                       ", config expects " + nn::shape_string(shape));
    }
  }
}

}  // namespace

FeatureMap encode(const Image& image, const ModelParams& params, const ModelConfig& config) {
  check_image(image);
  check_params(params, config);
  nn::Tape tape(false);
  const auto p = graph::bind_params(tape, params, false);
  return tape.value(graph::encoder(tape, p, tape.constant(image), config));
}

Tensor decode_teacher_forced(const FeatureMap& features, const StrokeSequence& gold, const ModelParams& params,
                             const ModelConfig& config) {
  if (static_cast<int>(gold.size()) + 1 > config.decoder.max_len) {
    throw UsageError("gold sequence of length " + std::to_string(gold.size()) + " exceeds decoder max_len " +
                     std::to_string(config.decoder.max_len));
  }
  nn::Tape tape(false);
  const auto p = graph::bind_params(tape, params, false);
  const auto mem = graph::memory(tape, p, tape.constant(features), config);
  const auto in = graph::teacher_inputs(gold);
  return tape.value(graph::decoder(tape, p, mem, in, config).logits);
}

double sequence_loss(const Tensor& logits, const StrokeSequence& gold) {
  if (logits.rank() != 2 || logits.dim(1) != DecoderConfig::kVocab) {
    throw UsageError("sequence_loss expects (T+1) x 6 logits, got " + nn::shape_string(logits.shape()));
  }
  if (static_cast<std::size_t>(logits.dim(0)) != gold.size() + 1) {
    throw UsageError("sequence_loss: " + std::to_string(logits.dim(0)) + " logit rows for a gold sequence of " +
                     std::to_string(gold.size()) + " strokes (+1 end step)");
  }
  nn::BasicTape<double> tape(false);
  const auto tgt = graph::teacher_targets(gold);
  return tape.value(nn::cross_entropy_rows(tape, tape.constant(logits.cast<double>()), tgt))[0];
}

DecodeResult greedy_decode(const FeatureMap& features, const ModelParams& params, const ModelConfig& config) {
  nn::Tape tape(false);
  const auto p = graph::bind_params(tape, params, false);
  const auto mem = graph::memory(tape, p, tape.constant(features), config);
  std::vector<int> tokens{DecoderConfig::kBegin};
  std::vector<std::uint8_t> strokes;
  DecodeResult result;
  const int max_len = config.decoder.max_len;
  while (static_cast<int>(strokes.size()) < max_len) {
    // The decoder input must fit the position table; a sequence already at
    // max_len - 1 strokes gets its final token from this step.
    const auto window = std::span<const int>(tokens).first(std::min<std::size_t>(tokens.size(), max_len));
    const Tensor& logits = tape.value(graph::decoder(tape, p, mem, window, config).logits);
    const float* last = logits.ptr() + static_cast<std::size_t>(logits.dim(0) - 1) * DecoderConfig::kVocab;
    int best = 0;
    for (int k = 1; k < DecoderConfig::kVocab; ++k)
      if (last[k] > last[best]) best = k;
    ++result.steps;
    if (best == static_cast<int>(Stroke::kEnd)) {
      result.ended_by_sentinel = true;
      break;
    }
    strokes.push_back(static_cast<std::uint8_t>(best));
    tokens.push_back(best);
    if (static_cast<int>(tokens.size()) > max_len) break;
  }
  result.strokes = StrokeSequence(std::move(strokes));
  return result;
}

std::vector<Tensor> attention_maps(const FeatureMap& features, const StrokeSequence& strokes,
                                   const ModelParams& params, const ModelConfig& config) {
  nn::Tape tape(false);
  const auto p = graph::bind_params(tape, params, false);
  const auto mem = graph::memory(tape, p, tape.constant(features), config);
  auto tokens = graph::teacher_inputs(strokes);
  if (static_cast<int>(tokens.size()) > config.decoder.max_len) tokens.resize(static_cast<std::size_t>(config.decoder.max_len));
  const Tensor& w = tape.value(graph::decoder(tape, p, mem, tokens, config).last_cross_weights);
  const int heads = w.dim(0), steps = w.dim(1), s = w.dim(2);
  std::vector<Tensor> maps;
  for (int t = 0; t < steps; ++t) {
    Tensor m({heads, mem.height, mem.width});
    for (int h = 0; h < heads; ++h)
      std::copy_n(w.ptr() + (static_cast<std::size_t>(h) * steps + t) * s, s, m.ptr() + static_cast<std::size_t>(h) * s);
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<float> char_head_logits(const FeatureMap& features, const ModelParams& params,
                                    const ModelConfig& config) {
  if (config.char_classes <= 0) throw UsageError("model has no character head");
  nn::Tape tape(false);
  const auto p = graph::bind_params(tape, params, false);
  Var pooled = nn::global_avg_pool(tape, tape.constant(features));
  const auto& logits = tape.value(nn::linear(tape, pooled, p("head.w"), p("head.b")));
  return {logits.data().begin(), logits.data().end()};
}

Gradients sequence_gradients(std::span<const TrainingSample> batch, const ModelParams& params,
                             const ModelConfig& config) {
  if (batch.empty()) throw UsageError("training batch is empty");
  check_params(params, config);
  Gradients out;
  for (const auto& [name, t] : params) out.grads.emplace(name, Tensor(t.shape()));
  const float inv = 1.0f / static_cast<float>(batch.size());
  // One tape per sample; gradients are summed in batch order.
  for (const auto& sample : batch) {
    check_image(sample.image);
    nn::Tape tape;
    const auto p = graph::bind_params(tape, params, true);
    const Var loss = graph::sample_loss(tape, p, tape.constant(sample.image), sample.strokes, config);
    tape.backward(loss);
    out.loss += tape.value(loss)[0];
    for (auto& [name, g] : out.grads) {
      const Tensor pg = tape.grad(p(name));
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * pg[i];
    }
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

Gradients char_head_gradients(std::span<const TrainingSample> batch, const ModelParams& params,
                              const ModelConfig& config) {
  if (batch.empty()) throw UsageError("training batch is empty");
  if (config.char_classes <= 0) throw UsageError("model has no character head");
  Gradients out;
  out.grads.emplace("head.w", Tensor(params.at("head.w").shape()));
  out.grads.emplace("head.b", Tensor(params.at("head.b").shape()));
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const auto& sample : batch) {
    if (sample.class_index < 0 || sample.class_index >= config.char_classes) {
      throw UsageError("sample class index " + std::to_string(sample.class_index) + " outside the head's " +
                       std::to_string(config.char_classes) + " classes");
    }
    nn::Tape tape;
    const auto p = graph::bind_params(tape, params, false);
    const Var f = graph::encoder(tape, p, tape.constant(sample.image), config);
    const Var w = tape.variable(params.at("head.w"));
    const Var b = tape.variable(params.at("head.b"));
    const Var logits = nn::linear(tape, nn::global_avg_pool(tape, f), w, b);
    const Var loss = nn::cross_entropy(tape, logits, sample.class_index);
    tape.backward(loss);
    out.loss += tape.value(loss)[0];
    for (auto [name, v] : {std::pair{"head.w", w}, std::pair{"head.b", b}}) {
      auto& g = out.grads.at(name);
      const Tensor pg = tape.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * pg[i];
    }
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

void adadelta_update(const std::map<std::string, Tensor>& grads, ModelParams& params, OptimizerState& state,
                     const AdadeltaConfig& opt) {
  const double rho = opt.rho, eps = opt.eps;
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) throw UsageError("gradient for unknown parameter '" + name + "'");
    Tensor& x = pit->second;
    if (g.shape() != x.shape()) throw UsageError("gradient shape mismatch for '" + name + "'");
    auto [sg_it, sg_new] = state.sq_grad.try_emplace(name, x.shape());
    auto [sd_it, sd_new] = state.sq_delta.try_emplace(name, x.shape());
    Tensor& sg = sg_it->second;
    Tensor& sd = sd_it->second;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      const double eg = rho * sg[i] + (1 - rho) * gi * gi;
      const double delta = -std::sqrt(sd[i] + eps) / std::sqrt(eg + eps) * gi;
      sg[i] = static_cast<float>(eg);
      sd[i] = static_cast<float>(rho * sd[i] + (1 - rho) * delta * delta);
      double xi = x[i];
      if (opt.weight_decay > 0) xi -= opt.lr * opt.weight_decay * xi;
      x[i] = static_cast<float>(xi + opt.lr * delta);
    }
  }
  ++state.steps;
}

double train_step(std::span<const TrainingSample> batch, ModelParams& params, OptimizerState& state,
                  const AdadeltaConfig& optimizer, const ModelConfig& config) {
  Gradients g = sequence_gradients(batch, params, config);
  adadelta_update(g.grads, params, state, optimizer);
  return g.loss;
}

namespace {

constexpr const char* kConfigTensor = "meta.config";
constexpr const char* kStepsTensor = "meta.steps";

Tensor config_tensor(const ModelConfig& c) {
  return Tensor({8}, {static_cast<float>(c.encoder.channels), static_cast<float>(c.encoder.num_blocks),
                      static_cast<float>(c.decoder.d_model), static_cast<float>(c.decoder.heads),
                      static_cast<float>(c.decoder.layers), static_cast<float>(c.decoder.max_len),
                      static_cast<float>(c.decoder.ffn), static_cast<float>(c.char_classes)});
}

ModelConfig config_from_tensor(const Tensor& t) {
  if (t.shape() != Shape{8}) throw DataError("checkpoint config record has shape " + nn::shape_string(t.shape()));
  ModelConfig c;
  c.encoder.channels = static_cast<int>(t[0]);
  c.encoder.num_blocks = static_cast<int>(t[1]);
  c.decoder.d_model = static_cast<int>(t[2]);
  c.decoder.heads = static_cast<int>(t[3]);
  c.decoder.layers = static_cast<int>(t[4]);
  c.decoder.max_len = static_cast<int>(t[5]);
  c.decoder.ffn = static_cast<int>(t[6]);
  c.char_classes = static_cast<int>(t[7]);
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  check_params(ck.params, ck.config);
  std::vector<NamedTensor> records;
  records.emplace_back(kConfigTensor, config_tensor(ck.config));
  records.emplace_back(kStepsTensor, Tensor({2}, {static_cast<float>(ck.optimizer.steps & 0xffffff),
                                                   static_cast<float>(ck.optimizer.steps >> 24)}));
  for (const auto& [name, t] : ck.params) records.emplace_back("param." + name, t);
  for (const auto& [name, t] : ck.optimizer.sq_grad) records.emplace_back("opt.sq_grad." + name, t);
  for (const auto& [name, t] : ck.optimizer.sq_delta) records.emplace_back("opt.sq_delta." + name, t);
  write_records(path, records);
}

namespace {

Checkpoint load_impl(const std::string& path, const ModelConfig* expected) {
  auto records = read_records(path);
  Checkpoint ck;
  bool have_config = false;
  for (const auto& [name, t] : records) {
    if (name == kConfigTensor) {
      ck.config = config_from_tensor(t);
      have_config = true;
    }
  }
  if (!have_config) throw DataError(path + ": checkpoint has no " + std::string(kConfigTensor) + " record");
  ModelConfig config = ck.config;
  if (expected != nullptr) config = *expected;
  std::map<std::string, Shape> shapes;
  try {
    shapes = param_shapes(config);
  } catch (const UsageError& err) {
    throw DataError(path + ": invalid stored config: " + err.what());
  }
  auto check_shape = [&](const std::string& record, const std::string& param, const Tensor& t) {
    auto it = shapes.find(param);
    if (it == shapes.end()) throw DataError(path + ": unknown tensor '" + record + "' for this model config");
    if (it->second != t.shape()) {
      throw DataError(path + ": tensor '" + record + "' has shape " + nn::shape_string(t.shape()) +
                      ", config expects " + nn::shape_string(it->second));
    }
  };
  for (auto& [name, t] : records) {
    if (name == kConfigTensor) continue;
    if (name == kStepsTensor) {
      if (t.size() != 2) throw DataError(path + ": malformed step counter");
      ck.optimizer.steps = static_cast<std::int64_t>(t[0]) + (static_cast<std::int64_t>(t[1]) << 24);
    } else if (name.rfind("param.", 0) == 0) {
      const std::string p = name.substr(6);
      check_shape(name, p, t);
      ck.params.emplace(p, std::move(t));
    } else if (name.rfind("opt.sq_grad.", 0) == 0) {
      const std::string p = name.substr(12);
      check_shape(name, p, t);
      ck.optimizer.sq_grad.emplace(p, std::move(t));
    } else if (name.rfind("opt.sq_delta.", 0) == 0) {
      const std::string p = name.substr(13);
      check_shape(name, p, t);
      ck.optimizer.sq_delta.emplace(p, std::move(t));
    } else {
      throw DataError(path + ": unknown tensor '" + name + "'");
    }
  }
  for (const auto& [name, shape] : shapes)
    if (!ck.params.contains(name)) throw DataError(path + ": checkpoint lacks tensor 'param." + name + "'");
  if (expected != nullptr && !(ck.config == *expected)) {
    throw DataError(path + ": checkpoint config differs from the expected config");
  }
  return ck;
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) { return load_impl(path, nullptr); }

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  return load_impl(path, &expected);
}

}  // namespace strokezs
