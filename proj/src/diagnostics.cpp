#include "strokezs/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "strokezs/model.hpp"
#include "strokezs/model_graph.hpp"
#include "strokezs/ops.hpp"
#include "strokezs/rng.hpp"

namespace strokezs {
namespace {

using nn::BasicTape;
using nn::BasicTensor;
using nn::Var;
using D = double;

constexpr double kComposedTol = 1e-3;
constexpr double kLinearTol = 1e-4;

template <typename T>
BasicTensor<T> random_tensor(nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <typename T>
std::vector<T> random_weights(std::size_t n, std::uint64_t seed) {
  std::vector<T> w(n);
  Rng rng(seed);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1, 1));
  return w;
}

bool is_key_bias(const std::string& name) { return name.size() > 3 && name.ends_with(".bk"); }

void primitive_rows(std::uint64_t seed, std::vector<GradCheckRow>& rows) {
  const double eps = 1e-5;
  auto s = [&](std::uint64_t k) { return hash_combine(seed, k); };
  const auto x = random_tensor<D>({4, 6}, s(1));
  const auto c = random_weights<D>(24, s(2));
  auto check = [&](const char* name, auto build, const BasicTensor<D>& at) {
    rows.push_back({name, nn::grad_check<D>(build, at, eps), kComposedTol});
  };

  auto relu_in = x;
  // keep away from the kink
  for (auto& v : relu_in.data())
    if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;
  check("relu", [&](BasicTape<D>& t, Var v) { return nn::dot_constant<D>(t, nn::relu(t, v), c); }, relu_in);
  check("softmax", [&](BasicTape<D>& t, Var v) { return nn::dot_constant<D>(t, nn::softmax(t, v), c); }, x);
  check("add", [&](BasicTape<D>& t, Var v) { return nn::dot_constant<D>(t, nn::add(t, v, t.constant(x)), c); }, x);

  const auto gain = random_tensor<D>({6}, s(3));
  const auto bias = random_tensor<D>({6}, s(4));
  check("layer_norm input", [&](BasicTape<D>& t, Var v) {
    return nn::dot_constant<D>(t, nn::layer_norm<D>(t, v, t.constant(gain), t.constant(bias)), c);
  }, x);
  check("layer_norm gain", [&](BasicTape<D>& t, Var g) {
    return nn::dot_constant<D>(t, nn::layer_norm<D>(t, t.constant(x), g, t.constant(bias)), c);
  }, gain);

  const auto w = random_tensor<D>({6, 5}, s(5));
  const auto b = random_tensor<D>({5}, s(6));
  const auto c5 = random_weights<D>(20, s(7));
  check("linear weight", [&](BasicTape<D>& t, Var v) {
    return nn::dot_constant<D>(t, nn::linear(t, t.constant(x), v, t.constant(b)), c5);
  }, w);
  const std::vector<int> ids{2, 0, 2, 1};
  check("embedding", [&](BasicTape<D>& t, Var v) { return nn::dot_constant<D>(t, nn::embedding(t, v, ids), c); },
        random_tensor<D>({3, 6}, s(8)));
  const auto fmap = random_tensor<D>({3, 4, 6}, s(9));
  check("global_avg_pool", [&](BasicTape<D>& t, Var v) {
    return nn::dot_constant<D>(t, nn::global_avg_pool(t, v), random_weights<D>(6, s(10)));
  }, fmap);
  const std::vector<int> targets{1, 5, 0, 3};
  check("cross_entropy", [&](BasicTape<D>& t, Var v) { return nn::cross_entropy_rows(t, v, targets); }, x);

  const auto img = random_tensor<D>({6, 6, 2}, s(11));
  const auto k = random_tensor<D>({3, 3, 2, 3}, s(12), 0.5);
  check("conv2d stride 2", [&](BasicTape<D>& t, Var kv) {
    return nn::dot_constant<D>(t, nn::conv2d(t, t.constant(img), kv, 2), random_weights<D>(27, s(13)));
  }, k);

  // multi-head attention w.r.t. queries and shared keys/values
  const int d = 8;
  std::vector<BasicTensor<D>> aw;
  for (int i = 0; i < 4; ++i) aw.push_back(random_tensor<D>({d, d}, s(20 + i), 0.6));
  for (int i = 0; i < 4; ++i) aw.push_back(random_tensor<D>({d}, s(30 + i), 0.2));
  const auto q = random_tensor<D>({3, d}, s(40));
  const auto kv = random_tensor<D>({4, d}, s(41));
  const auto ca = random_weights<D>(3 * d, s(42));
  auto attn = [&](BasicTape<D>& t, Var qv, Var kvv, bool causal) {
    nn::AttentionParams p{t.constant(aw[0]), t.constant(aw[4]), t.constant(aw[1]), t.constant(aw[5]),
                          t.constant(aw[2]), t.constant(aw[6]), t.constant(aw[3]), t.constant(aw[7])};
    return nn::dot_constant<D>(t, nn::multi_head_attention(t, qv, kvv, kvv, p, 2, causal).output, ca);
  };
  check("attention queries", [&](BasicTape<D>& t, Var v) { return attn(t, v, t.constant(kv), false); }, q);
  check("attention keys/values", [&](BasicTape<D>& t, Var v) { return attn(t, t.constant(q), v, false); }, kv);
  check("causal self-attention", [&](BasicTape<D>& t, Var v) { return attn(t, v, v, true); }, q);

  // Linear-only compositions in float32. f is linear, so the central
  // difference is exact for any step; a wide step and weights bounded away
  // from zero keep float rounding of f out of the quotient.
  auto positive = [&](std::size_t n, std::uint64_t k) {
    std::vector<float> w(n);
    Rng rng(s(k));
    for (auto& v : w) v = static_cast<float>(rng.uniform(0.5, 1.0));
    return w;
  };
  const auto xf = random_tensor<float>({10}, s(50));
  const auto cf = positive(10, 51);
  nn::Tensor wf({10, 4});
  const auto wv = positive(40, 52);
  std::copy(wv.begin(), wv.end(), wf.data().begin());
  const auto cf4 = positive(4, 53);
  rows.push_back({"linear composition (float32)",
                  nn::grad_check<float>([&](nn::Tape& t, Var v) {
                    return nn::dot_constant<float>(t, nn::linear(t, nn::scale<float>(t, v, 0.5f), t.constant(wf)), cf4);
                  }, xf, 1.0),
                  kLinearTol});
  rows.push_back({"dot (float32)",
                  nn::grad_check<float>([&](nn::Tape& t, Var v) { return nn::dot_constant<float>(t, v, cf); }, xf, 1.0),
                  kLinearTol});
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder.channels = 8;
  c.encoder.num_blocks = 1;
  c.decoder.d_model = 8;
  c.decoder.heads = 2;
  c.decoder.layers = 1;
  c.decoder.ffn = 16;
  c.decoder.max_len = 10;
  return c;
}

void composed_rows(std::uint64_t seed, std::vector<GradCheckRow>& rows) {
  const ModelConfig c = tiny_config();
  const ModelParams params = init_params(c, seed);
  const auto gold = StrokeSequence::parse("3152");
  const double eps = 1e-5;

  // Central differences are only meaningful away from ReLU kinks: redraw the
  // input until every pre-activation clears 10 * eps.
  BasicTensor<D> image;
  for (std::uint64_t k = 0;; ++k) {
    image = random_tensor<D>({8, 8, 3}, hash_combine(seed, 99 + k));
    BasicTape<D> probe(false);
    graph::sample_loss(probe, graph::bind_params(probe, params, false), probe.constant(image), gold, c);
    if (probe.kink_margin() > 10 * eps) break;
    if (k == 1000) throw std::runtime_error("no input clear of ReLU kinks");
  }

  rows.push_back({"composed: image", nn::grad_check<D>([&](BasicTape<D>& tape, Var x) {
                    const auto p = graph::bind_params(tape, params, false);
                    return graph::sample_loss(tape, p, x, gold, c);
                  }, image, eps),
                  kComposedTol});

  // Analytic gradients once, for the key-bias rows.
  BasicTape<D> ref;
  const auto pr = graph::bind_params(ref, params, true);
  ref.backward(graph::sample_loss(ref, pr, ref.constant(image), gold, c));
  std::map<std::string, BasicTensor<D>> analytic;
  double global = 0;
  for (const auto& [name, t] : params) {
    analytic[name] = ref.grad(pr(name));
    for (double v : analytic[name].data()) global = std::max(global, std::abs(v));
  }

  for (const auto& [name, t] : params) {
    if (is_key_bias(name)) {
      // A key bias shifts every score in a softmax row by the same amount,
      // so its true gradient is zero and a relative error is meaningless.
      double peak = 0;
      for (double v : analytic[name].data()) peak = std::max(peak, std::abs(v));
      rows.push_back({"composed: " + name + " vanishes", peak / global, 1e-9});
      continue;
    }
    rows.push_back({"composed: " + name, nn::grad_check<D>([&](BasicTape<D>& tape, Var x) {
                      auto p = graph::bind_params(tape, params, false);
                      p.vars.at(name) = x;
                      return graph::sample_loss(tape, p, tape.constant(image), gold, c);
                    }, t.cast<D>(), eps),
                    kComposedTol});
  }
}

}  // namespace

std::vector<GradCheckRow> run_grad_checks(std::uint64_t seed) {
  std::vector<GradCheckRow> rows;
  primitive_rows(seed, rows);
  composed_rows(seed, rows);
  return rows;
}

}  // namespace strokezs
