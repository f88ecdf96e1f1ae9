#include <doctest.h>

#include <cmath>
#include <vector>

#include "strokezs/ops.hpp"
#include "strokezs/rng.hpp"

using namespace strokezs;
using namespace strokezs::nn;

namespace {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

// Random projection weights so every output element matters.
template <typename T>
std::vector<T> random_weights(std::size_t n, std::uint64_t seed) {
  std::vector<T> w(n);
  Rng rng(seed);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1, 1));
  return w;
}

// Keeps inputs of piecewise-linear ops away from kinks.
template <typename T>
void push_from_zero(BasicTensor<T>& t, double margin) {
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = static_cast<T>(v < 0 ? -margin : margin);
}

}  // namespace

TEST_CASE("conv2d identity and zero kernels") {
  const auto x = random_tensor<float>({5, 7, 1}, 1);
  Tensor id({3, 3, 1, 1});
  id[4] = 1.0f;
  Tape tape;
  const Var out = conv2d(tape, tape.constant(x), tape.constant(id), 1);
  CHECK(tape.value(out) == x);

  const Var zero = conv2d(tape, tape.constant(x), tape.constant(Tensor({3, 3, 1, 4})), 1);
  for (float v : tape.value(zero).data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d output shape follows ceil(H/stride)") {
  Tape tape;
  const Var x = tape.constant(Tensor({7, 6, 2}));
  const Var k = tape.constant(Tensor({3, 3, 2, 5}));
  CHECK(tape.value(conv2d(tape, x, k, 1)).shape() == Shape{7, 6, 5});
  CHECK(tape.value(conv2d(tape, x, k, 2)).shape() == Shape{4, 3, 5});
  CHECK_THROWS_AS(conv2d(tape, x, tape.constant(Tensor({3, 3, 3, 5})), 1), UsageError);
  CHECK_THROWS_AS(conv2d(tape, x, k, 3), UsageError);
}

TEST_CASE("conv2d gradients match central differences in float32") {
  const auto x = random_tensor<float>({6, 6, 2}, 11);
  const auto k = random_tensor<float>({3, 3, 2, 3}, 12);
  for (int stride : {1, 2}) {
    const auto wk = random_weights<float>(static_cast<std::size_t>(((6 + stride - 1) / stride) * ((6 + stride - 1) / stride) * 3), 14);
    // f is linear in each argument, so the central difference is exact for
    // any step; a wide step keeps float32 rounding of f out of the quotient.
    const double err_x = grad_check<float>(
        [&](Tape& t, Var in) { return dot_constant<float>(t, conv2d(t, in, t.constant(k), stride), wk); }, x, 4.0);
    const double err_k = grad_check<float>(
        [&](Tape& t, Var kv) { return dot_constant<float>(t, conv2d(t, t.constant(x), kv, stride), wk); }, k, 4.0);
    CHECK(err_x < 1e-3);
    CHECK(err_k < 1e-3);
  }
}

TEST_CASE("grad_check on a linear function is exact") {
  const auto x = random_tensor<float>({10}, 3);
  const auto c = random_weights<float>(10, 4);
  const double err = grad_check<float>([&](Tape& t, Var v) { return dot_constant<float>(t, v, c); }, x, 1e-2);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check rejects a zero step and non-scalar outputs") {
  const auto x = random_tensor<float>({3}, 5);
  CHECK_THROWS_AS(grad_check<float>([](Tape& t, Var v) { return sum(t, v); }, x, 0.0), UsageError);
  CHECK_THROWS_AS(grad_check<float>([](Tape&, Var v) { return v; }, x, 1e-3), UsageError);
}

TEST_CASE("cross_entropy analytic values") {
  Tape tape;
  const Var uniform = cross_entropy(tape, tape.constant(Tensor({6}, 0.3f)), 2);
  CHECK(tape.value(uniform)[0] == doctest::Approx(std::log(6.0)).epsilon(1e-6));

  BasicTape<double> dt;
  BasicTensor<double> sat({6}, 0.0);
  sat[4] = 30.0;
  CHECK(dt.value(cross_entropy(dt, dt.constant(sat), 4))[0] < 1e-9);

  CHECK_THROWS_AS(cross_entropy(tape, tape.constant(Tensor({6})), 6), UsageError);
  CHECK_THROWS_AS(cross_entropy(tape, tape.constant(Tensor({6})), -1), UsageError);
}

TEST_CASE("cross_entropy gradient equals softmax minus one-hot") {
  const auto logits = random_tensor<float>({6}, 21, 3.0);
  const int target = 3;
  Tape tape;
  const Var l = tape.variable(logits);
  tape.backward(cross_entropy(tape, l, target));
  const Tensor g = tape.grad(l);
  double z = 0;
  for (float v : logits.data()) z += std::exp(static_cast<double>(v));
  for (int j = 0; j < 6; ++j) {
    const double expected = std::exp(static_cast<double>(logits[j])) / z - (j == target ? 1.0 : 0.0);
    CHECK(std::abs(g[j] - expected) < 1e-5);
  }
}

TEST_CASE("multi-head attention: uniform weights for identical keys") {
  const int t = 3, s = 4, d = 8, heads = 2;
  Tape tape;
  Tensor keys({s, d});
  const auto key_row = random_tensor<float>({d}, 31);
  for (int i = 0; i < s; ++i) std::copy(key_row.ptr(), key_row.ptr() + d, keys.ptr() + i * d);
  const auto values = random_tensor<float>({s, d}, 32);
  const auto queries = random_tensor<float>({t, d}, 33);
  AttentionParams p;
  std::uint64_t seed = 40;
  for (Var* v : {&p.wq, &p.wk, &p.wv, &p.wo}) *v = tape.constant(random_tensor<float>({d, d}, seed++));
  for (Var* v : {&p.bq, &p.bk, &p.bv, &p.bo}) *v = tape.constant(random_tensor<float>({d}, seed++));
  const auto res = multi_head_attention(tape, tape.constant(queries), tape.constant(keys), tape.constant(values), p, heads);
  const Tensor& w = tape.value(res.weights);
  CHECK(w.shape() == Shape{heads, t, s});
  for (float v : w.data()) CHECK(v == doctest::Approx(1.0 / s).epsilon(1e-6));

  // Expected output: project the mean value row through wv/bv then wo/bo.
  const Var mean_v = tape.constant([&] {
    Tensor m({1, d});
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < d; ++j) m[j] += values[i * d + j] / s;
    return m;
  }());
  const Tensor expected = tape.value(linear(tape, linear(tape, mean_v, p.wv, p.bv), p.wo, p.bo));
  const Tensor& out = tape.value(res.output);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) CHECK(out[i * d + j] == doctest::Approx(expected[j]).epsilon(1e-5));
}

TEST_CASE("multi-head attention rows sum to one and reject bad head counts") {
  Tape tape;
  const Var q = tape.constant(random_tensor<float>({5, 12}, 50, 2.0));
  const Var k = tape.constant(random_tensor<float>({7, 12}, 51, 2.0));
  const auto res = attention_core(tape, q, k, k, 3, false);
  const Tensor& w = tape.value(res.weights);
  for (int r = 0; r < 3 * 5; ++r) {
    double sum = 0;
    for (int j = 0; j < 7; ++j) sum += w[r * 7 + j];
    CHECK(std::abs(sum - 1.0) < 1e-5);
  }
  CHECK_THROWS_AS(attention_core(tape, q, k, k, 5, false), UsageError);
}

TEST_CASE("multi-head attention gradient check (2 heads, T=3, S=4, d=8)") {
  const int t = 3, s = 4, d = 8;
  BasicTape<double> setup;
  std::vector<BasicTensor<double>> weights;
  for (int i = 0; i < 4; ++i) weights.push_back(random_tensor<double>({d, d}, 60 + i, 0.6));
  for (int i = 0; i < 4; ++i) weights.push_back(random_tensor<double>({d}, 70 + i, 0.2));
  const auto q = random_tensor<double>({t, d}, 80);
  const auto kv = random_tensor<double>({s, d}, 81);
  const auto c = random_weights<double>(t * d, 82);
  auto build = [&](BasicTape<double>& tp, Var qv, Var kvv, bool causal) {
    AttentionParams p{tp.constant(weights[0]), tp.constant(weights[4]), tp.constant(weights[1]),
                      tp.constant(weights[5]), tp.constant(weights[2]), tp.constant(weights[6]),
                      tp.constant(weights[3]), tp.constant(weights[7])};
    return dot_constant<double>(tp, multi_head_attention(tp, qv, kvv, kvv, p, 2, causal).output, c);
  };
  CHECK(grad_check<double>([&](BasicTape<double>& tp, Var v) { return build(tp, v, tp.constant(kv), false); }, q,
                           1e-5) < 1e-3);
  CHECK(grad_check<double>([&](BasicTape<double>& tp, Var v) { return build(tp, tp.constant(q), v, false); }, kv,
                           1e-5) < 1e-3);
  const auto self = random_tensor<double>({t, d}, 83);
  CHECK(grad_check<double>([&](BasicTape<double>& tp, Var v) { return build(tp, v, v, true); }, self, 1e-5) < 1e-3);

  // Same check in float32 with a coarser step.
  const auto qf = q.cast<float>();
  const auto kvf = kv.cast<float>();
  const auto cf = std::vector<float>(c.begin(), c.end());
  const double err = grad_check<float>(
      [&](Tape& tp, Var v) {
        AttentionParams p{tp.constant(weights[0].cast<float>()), tp.constant(weights[4].cast<float>()),
                          tp.constant(weights[1].cast<float>()), tp.constant(weights[5].cast<float>()),
                          tp.constant(weights[2].cast<float>()), tp.constant(weights[6].cast<float>()),
                          tp.constant(weights[3].cast<float>()), tp.constant(weights[7].cast<float>())};
        return dot_constant<float>(tp, multi_head_attention(tp, v, tp.constant(kvf), tp.constant(kvf), p, 2).output, cf);
      },
      qf, 1e-2);
  MESSAGE("float32 attention grad-check max relative error: " << err);
}

TEST_CASE("primitive gradient checks") {
  using D = double;
  const double eps = 1e-5;
  const auto x = random_tensor<D>({4, 6}, 90);
  const auto c = random_weights<D>(24, 91);
  auto check = [&](auto build, const BasicTensor<D>& at, const char* name) {
    const double err = grad_check<D>(build, at, eps);
    INFO(name << " max relative error " << err);
    CHECK(err < 1e-3);
  };
  auto relu_in = x;
  push_from_zero(relu_in, 10 * eps);
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, relu(t, v), c); }, relu_in, "relu");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, softmax(t, v), c); }, x, "softmax");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, add(t, v, t.constant(x)), c); }, x, "add");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, scale<D>(t, v, 2.5), c); }, x, "scale");

  const auto gain = random_tensor<D>({6}, 92);
  const auto bias = random_tensor<D>({6}, 93);
  check([&](BasicTape<D>& t, Var v) {
    return dot_constant<D>(t, layer_norm<D>(t, v, t.constant(gain), t.constant(bias)), c);
  }, x, "layer_norm input");
  check([&](BasicTape<D>& t, Var g) {
    return dot_constant<D>(t, layer_norm<D>(t, t.constant(x), g, t.constant(bias)), c);
  }, gain, "layer_norm gain");

  const auto w = random_tensor<D>({6, 5}, 94);
  const auto b = random_tensor<D>({5}, 95);
  const auto c5 = random_weights<D>(20, 96);
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, linear(t, v, t.constant(w), t.constant(b)), c5); }, x,
        "linear input");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, linear(t, t.constant(x), v, t.constant(b)), c5); }, w,
        "linear weight");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, linear(t, t.constant(x), t.constant(w), v), c5); }, b,
        "linear bias");

  const std::vector<int> ids{2, 0, 2, 1};
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, embedding(t, v, ids), c); },
        random_tensor<D>({3, 6}, 97), "embedding");

  const auto fmap = random_tensor<D>({3, 4, 6}, 98);
  const auto c6 = random_weights<D>(6, 99);
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, global_avg_pool(t, v), c6); }, fmap, "avg_pool");
  check([&](BasicTape<D>& t, Var v) { return dot_constant<D>(t, add_bias(t, t.constant(fmap), v), random_weights<D>(72, 7)); },
        random_tensor<D>({6}, 100), "add_bias");

  const std::vector<int> targets{1, 5, 0, 3};
  check([&](BasicTape<D>& t, Var v) { return cross_entropy_rows(t, v, targets); }, x, "cross_entropy_rows");
}

TEST_CASE("composition conv -> relu -> pool -> linear passes grad_check") {
  using D = double;
  const auto img = random_tensor<D>({6, 6, 2}, 110);
  const auto k = random_tensor<D>({3, 3, 2, 4}, 111, 0.5);
  const auto w = random_tensor<D>({4, 3}, 112);
  auto f = [&](BasicTape<D>& t, Var kv) {
    Var h = relu(t, conv2d(t, t.constant(img), kv, 1));
    return dot_constant<D>(t, linear(t, global_avg_pool(t, h), t.constant(w)), std::vector<D>{0.3, -1.2, 0.8});
  };
  CHECK(grad_check<D>(f, k, 1e-6) < 1e-3);
}

TEST_CASE("backward is linear in the loss") {
  const auto x = random_tensor<float>({3, 4}, 120);
  const auto w = random_tensor<float>({4, 4}, 121);
  auto grad_of = [&](auto loss_fn) {
    Tape t;
    const Var v = t.variable(x);
    t.backward(loss_fn(t, v));
    return t.grad(v);
  };
  auto loss_a = [&](Tape& t, Var v) { return sum(t, softmax(t, linear(t, v, t.constant(w)))); };
  auto loss_b = [&](Tape& t, Var v) {
    return dot_constant<float>(t, relu(t, v), random_weights<float>(12, 122));
  };
  const Tensor ga = grad_of(loss_a);
  const Tensor gb = grad_of(loss_b);
  const Tensor gab = grad_of([&](Tape& t, Var v) { return add(t, loss_a(t, v), loss_b(t, v)); });
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(gab[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-6));
}

TEST_CASE("forward ops are bitwise deterministic") {
  const auto img = random_tensor<float>({8, 8, 3}, 130);
  const auto k = random_tensor<float>({3, 3, 3, 5}, 131);
  auto run = [&] {
    Tape t(false);
    return t.value(softmax(t, relu(t, conv2d(t, t.constant(img), t.constant(k), 2))));
  };
  CHECK(run() == run());
}

TEST_CASE("sinusoid_2d requires width divisible by four") {
  CHECK(sinusoid_2d(2, 3, 8).shape() == Shape{6, 8});
  CHECK_THROWS_AS(sinusoid_2d(2, 2, 6), UsageError);
}

TEST_CASE("relu records the distance of its inputs to the kink") {
  Tape tape;
  CHECK(std::isinf(tape.kink_margin()));
  Tensor x({3});
  x[0] = -0.5f;
  x[1] = 0.02f;
  x[2] = 2.0f;
  relu(tape, tape.constant(x));
  CHECK(tape.kink_margin() == doctest::Approx(0.02));
}
