#include "strokezs/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace strokezs::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw UsageError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstView = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using View = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;

template <typename T, typename A, typename B>
void gemm_into(View<T>& c, T alpha, T beta, const A& a, const B& b) {
  if (beta == T(0)) {
    c.noalias() = alpha * a * b;
  } else {
    if (beta != T(1)) c *= beta;
    c.noalias() += alpha * a * b;
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  if (m == 0 || n == 0) return;
  View<T> cv(c, m, n, Eigen::OuterStride<>(ldc));
  if (k == 0) {
    if (beta != T(1)) cv *= beta;
    return;
  }
  const ConstView<T> av(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  const ConstView<T> bv(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  if (!trans_a && !trans_b) gemm_into(cv, alpha, beta, av, bv);
  if (!trans_a && trans_b) gemm_into(cv, alpha, beta, av, bv.transpose());
  if (trans_a && !trans_b) gemm_into(cv, alpha, beta, av.transpose(), bv);
  if (trans_a && trans_b) gemm_into(cv, alpha, beta, av.transpose(), bv.transpose());
}

template void gemm<float>(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*,
                          int);
template void gemm<double>(bool, bool, int, int, int, double, const double*, int, const double*, int, double,
                           double*, int);

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

template <typename T>
int last_dim(const BasicTensor<T>& t) {
  require(t.rank() >= 1, "tensor must have rank >= 1");
  return t.dim(-1);
}

// im2col for a 3x3 kernel, padding 1.
template <typename T>
void im2col(const T* in, int h, int w, int cin, int stride, int ho, int wo, T* cols) {
  const int k9 = 9 * cin;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* row = cols + static_cast<std::size_t>(oy * wo + ox) * k9;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          T* dst = row + (ky * 3 + kx) * cin;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::fill(dst, dst + cin, T(0));
          } else {
            const T* src = in + (static_cast<std::size_t>(iy) * w + ix) * cin;
            std::copy(src, src + cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int h, int w, int cin, int stride, int ho, int wo, T* in_grad) {
  const int k9 = 9 * cin;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const T* row = cols + static_cast<std::size_t>(oy * wo + ox) * k9;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const T* src = row + (ky * 3 + kx) * cin;
          T* dst = in_grad + (static_cast<std::size_t>(iy) * w + ix) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, int stride) {
  const auto& x = tape.value(input);
  const auto& k = tape.value(kernel);
  require(stride == 1 || stride == 2, "conv2d stride must be 1 or 2");
  require(x.rank() == 3, "conv2d input must be H x W x C, got " + shape_string(x.shape()));
  require(k.rank() == 4 && k.dim(0) == 3 && k.dim(1) == 3,
          "conv2d kernel must be 3 x 3 x Cin x Cout, got " + shape_string(k.shape()));
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  require(k.dim(2) == cin, "conv2d channel mismatch: input " + shape_string(x.shape()) + " kernel " +
                               shape_string(k.shape()));
  const int cout = k.dim(3);
  const int ho = (h + stride - 1) / stride;
  const int wo = (w + stride - 1) / stride;
  const int p = ho * wo;
  const int k9 = 9 * cin;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(p) * k9);
  im2col(x.ptr(), h, w, cin, stride, ho, wo, cols->data());
  BasicTensor<T> out({ho, wo, cout});
  gemm<T>(false, false, p, cout, k9, T(1), cols->data(), k9, k.ptr(), cout, T(0), out.ptr(), cout);

  if (!tape.recording() || (!tape.requires_grad(input) && !tape.requires_grad(kernel))) {
    return tape.record(std::move(out), {input, kernel}, {});
  }
  return tape.record(std::move(out), {input, kernel},
                     [=](BasicTape<T>& tp, int self) {
                       const T* gout = tp.output_grad(self).data();
                       if (tp.requires_grad(kernel)) {
                         T* gk = tp.grad_buffer(kernel).data();
                         gemm<T>(true, false, k9, cout, p, T(1), cols->data(), k9, gout, cout, T(1), gk,
                                 cout);
                       }
                       if (tp.requires_grad(input)) {
                         std::vector<T> gcols(static_cast<std::size_t>(p) * k9);
                         gemm<T>(false, true, p, k9, cout, T(1), gout, cout, tp.value(kernel).ptr(), cout,
                                 T(0), gcols.data(), k9);
                         col2im_add(gcols.data(), h, w, cin, stride, ho, wo, tp.grad_buffer(input).data());
                       }
                     });
}

template <typename T>
Var add_bias(BasicTape<T>& tape, Var x, Var bias) {
  const auto& xv = tape.value(x);
  const auto& bv = tape.value(bias);
  const int c = last_dim(xv);
  require(bv.rank() == 1 && bv.dim(0) == c,
          "bias shape " + shape_string(bv.shape()) + " does not match " + shape_string(xv.shape()));
  BasicTensor<T> out = xv;
  const std::size_t rows = out.size() / static_cast<std::size_t>(c);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += bv[j];
  return tape.record(std::move(out), {x, bias}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    if (tp.requires_grad(x)) {
      auto gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) gb[j] += g[r * c + j];
    }
  });
}

template <typename T>
Var relu(BasicTape<T>& tape, Var x) {
  BasicTensor<T> out = tape.value(x);
  double margin = std::numeric_limits<double>::infinity();
  for (auto& v : out.data()) {
    margin = std::min(margin, std::abs(static_cast<double>(v)));
    v = v > T(0) ? v : T(0);
  }
  tape.note_kink_distance(margin);
  return tape.record(std::move(out), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    const auto& xv = tp.value(x);
    auto gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(),
          "add shape mismatch: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto gv = tp.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <typename T>
Var scale(BasicTape<T>& tape, Var x, T factor) {
  BasicTensor<T> out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

template <typename T>
Var linear(BasicTape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  require(wv.rank() == 2, "linear weight must be in x out, got " + shape_string(wv.shape()));
  const int in = wv.dim(0), outd = wv.dim(1);
  require(last_dim(xv) == in, "linear input " + shape_string(xv.shape()) + " does not match weight " +
                                  shape_string(wv.shape()));
  const int rows = static_cast<int>(xv.size() / static_cast<std::size_t>(in));
  Shape shape = xv.shape();
  shape.back() = outd;
  BasicTensor<T> out(shape);
  if (bias.valid()) {
    const auto& bv = tape.value(bias);
    require(bv.rank() == 1 && bv.dim(0) == outd, "linear bias shape " + shape_string(bv.shape()) +
                                                     " does not match output width " +
                                                     std::to_string(outd));
    for (int r = 0; r < rows; ++r) std::copy(bv.ptr(), bv.ptr() + outd, out.ptr() + r * outd);
  }
  gemm<T>(false, false, rows, outd, in, T(1), xv.ptr(), in, wv.ptr(), outd, T(1), out.ptr(), outd);
  const Var b = bias.valid() ? bias : x;  // placeholder keeps the input list fixed
  return tape.record(std::move(out), {x, weight, b}, [=](BasicTape<T>& tp, int self) {
    const T* g = tp.output_grad(self).data();
    if (tp.requires_grad(x)) {
      gemm<T>(false, true, rows, in, outd, T(1), g, outd, tp.value(weight).ptr(), outd, T(1),
              tp.grad_buffer(x).data(), in);
    }
    if (tp.requires_grad(weight)) {
      gemm<T>(true, false, in, outd, rows, T(1), tp.value(x).ptr(), in, g, outd, T(1),
              tp.grad_buffer(weight).data(), outd);
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
    }
  });
}

template <typename T>
Var layer_norm(BasicTape<T>& tape, Var x, Var gain, Var bias, T eps) {
  const auto& xv = tape.value(x);
  const int d = last_dim(xv);
  require(tape.value(gain).shape() == Shape{d} && tape.value(bias).shape() == Shape{d},
          "layer_norm gain/bias must have shape [" + std::to_string(d) + "]");
  const int rows = static_cast<int>(xv.size() / static_cast<std::size_t>(d));
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  BasicTensor<T> out(xv.shape());
  const auto& g = tape.value(gain);
  const auto& b = tape.value(bias);
  for (int r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (int j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * inv;
      (*xhat)[static_cast<std::size_t>(r) * d + j] = xh;
      out[static_cast<std::size_t>(r) * d + j] = xh * g[j] + b[j];
    }
  }
  return tape.record(std::move(out), {x, gain, bias}, [=](BasicTape<T>& tp, int self) {
    auto go = tp.output_grad(self);
    const auto& gv = tp.value(gain);
    if (tp.requires_grad(gain)) {
      auto gg = tp.grad_buffer(gain);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gg[j] += go[r * d + j] * (*xhat)[r * d + j];
    }
    if (tp.requires_grad(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gb[j] += go[r * d + j];
    }
    if (tp.requires_grad(x)) {
      auto gx = tp.grad_buffer(x);
      std::vector<T> dxh(static_cast<std::size_t>(d));
      for (int r = 0; r < rows; ++r) {
        T mean_d = 0, mean_dx = 0;
        for (int j = 0; j < d; ++j) {
          dxh[j] = go[r * d + j] * gv[j];
          mean_d += dxh[j];
          mean_dx += dxh[j] * (*xhat)[r * d + j];
        }
        mean_d /= T(d);
        mean_dx /= T(d);
        const T inv = (*inv_sigma)[r];
        for (int j = 0; j < d; ++j)
          gx[r * d + j] += inv * (dxh[j] - mean_d - (*xhat)[r * d + j] * mean_dx);
      }
    }
  });
}

namespace {

template <typename T>
void softmax_row(const T* in, T* out, int n) {
  T m = -std::numeric_limits<T>::infinity();
  for (int j = 0; j < n; ++j) m = std::max(m, in[j]);
  T s = 0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - m);
    s += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= s;
}

}  // namespace

template <typename T>
Var softmax(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  const int d = last_dim(xv);
  const int rows = static_cast<int>(xv.size() / static_cast<std::size_t>(d));
  BasicTensor<T> out(xv.shape());
  for (int r = 0; r < rows; ++r) softmax_row(xv.ptr() + r * d, out.ptr() + r * d, d);
  auto y = std::make_shared<BasicTensor<T>>(out);
  return tape.record(std::move(out), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gx = tp.grad_buffer(x);
    for (int r = 0; r < rows; ++r) {
      T dotp = 0;
      for (int j = 0; j < d; ++j) dotp += g[r * d + j] * (*y)[r * d + j];
      for (int j = 0; j < d; ++j) gx[r * d + j] += (*y)[r * d + j] * (g[r * d + j] - dotp);
    }
  });
}

template <typename T>
Var embedding(BasicTape<T>& tape, Var table, std::span<const int> ids) {
  const auto& tv = tape.value(table);
  require(tv.rank() == 2, "embedding table must be V x d");
  const int vocab = tv.dim(0), d = tv.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  BasicTensor<T> out({static_cast<int>(idx.size()), d});
  for (std::size_t t = 0; t < idx.size(); ++t) {
    require(idx[t] >= 0 && idx[t] < vocab,
            "embedding id " + std::to_string(idx[t]) + " outside [0," + std::to_string(vocab) + ")");
    std::copy(tv.ptr() + static_cast<std::size_t>(idx[t]) * d,
              tv.ptr() + static_cast<std::size_t>(idx[t] + 1) * d, out.ptr() + t * d);
  }
  return tape.record(std::move(out), {table}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gt = tp.grad_buffer(table);
    for (std::size_t t = 0; t < idx.size(); ++t)
      for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(idx[t]) * d + j] += g[t * d + j];
  });
}

template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 3, "global_avg_pool expects H x W x C, got " + shape_string(xv.shape()));
  const int p = xv.dim(0) * xv.dim(1), c = xv.dim(2);
  BasicTensor<T> out({c});
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < c; ++j) out[j] += xv[static_cast<std::size_t>(i) * c + j];
  for (auto& v : out.data()) v /= T(p);
  return tape.record(std::move(out), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gx = tp.grad_buffer(x);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[j] / T(p);
  });
}

template <typename T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape) {
  const auto& xv = tape.value(x);
  require(shape_size(shape) == xv.size(),
          "cannot reshape " + shape_string(xv.shape()) + " to " + shape_string(shape));
  return tape.record(xv.reshaped(std::move(shape)), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var slice_rows(BasicTape<T>& tape, Var x, int rows) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 2 && rows >= 0 && rows <= xv.dim(0),
          "slice_rows: cannot take " + std::to_string(rows) + " rows of " + shape_string(xv.shape()));
  const int d = xv.dim(1);
  BasicTensor<T> out({rows, d});
  std::copy(xv.ptr(), xv.ptr() + static_cast<std::size_t>(rows) * d, out.ptr());
  return tape.record(std::move(out), {x}, [=](BasicTape<T>& tp, int self) {
    auto g = tp.output_grad(self);
    auto gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var x) {
  T s = 0;
  for (T v : tape.value(x).data()) s += v;
  return tape.record(BasicTensor<T>({1}, {s}), {x}, [=](BasicTape<T>& tp, int self) {
    const T g = tp.output_grad(self)[0];
    for (auto& v : tp.grad_buffer(x)) v += g;
  });
}

template <typename T>
Var dot_constant(BasicTape<T>& tape, Var x, std::span<const T> weights) {
  const auto& xv = tape.value(x);
  require(weights.size() == xv.size(), "dot_constant size mismatch");
  std::vector<T> w(weights.begin(), weights.end());
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += xv[i] * w[i];
  return tape.record(BasicTensor<T>({1}, {s}), {x}, [=](BasicTape<T>& tp, int self) {
    const T g = tp.output_grad(self)[0];
    auto gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
  });
}

template <typename T>
Var cross_entropy_rows(BasicTape<T>& tape, Var logits, std::span<const int> targets) {
  const auto& lv = tape.value(logits);
  const int k = last_dim(lv);
  const int rows = static_cast<int>(lv.size() / static_cast<std::size_t>(k));
  require(static_cast<int>(targets.size()) == rows,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
              " logit rows");
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<T>>(lv.size());
  T loss = 0;
  for (int r = 0; r < rows; ++r) {
    require(tgt[r] >= 0 && tgt[r] < k,
            "cross_entropy target " + std::to_string(tgt[r]) + " outside [0," + std::to_string(k) + ")");
    const T* row = lv.ptr() + static_cast<std::size_t>(r) * k;
    T m = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) m = std::max(m, row[j]);
    T s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - m);
    const T lse = m + std::log(s);
    loss += lse - row[tgt[r]];
    for (int j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(r) * k + j] = std::exp(row[j] - lse);
  }
  return tape.record(BasicTensor<T>({1}, {loss}), {logits}, [=](BasicTape<T>& tp, int self) {
    const T g = tp.output_grad(self)[0];
    auto gl = tp.grad_buffer(logits);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        gl[i] += g * ((*probs)[i] - (j == tgt[r] ? T(1) : T(0)));
      }
  });
}

template <typename T>
Var cross_entropy(BasicTape<T>& tape, Var logits, int target) {
  require(tape.value(logits).rank() == 1, "cross_entropy expects a logit vector");
  const int t[1] = {target};
  return cross_entropy_rows(tape, logits, std::span<const int>(t));
}

template <typename T>
AttentionResult attention_core(BasicTape<T>& tape, Var q, Var k, Var v, int heads, bool causal) {
  const auto& qv = tape.value(q);
  const auto& kv = tape.value(k);
  const auto& vv = tape.value(v);
  require(qv.rank() == 2 && kv.rank() == 2 && vv.rank() == 2, "attention inputs must be rank 2");
  const int tq = qv.dim(0), d = qv.dim(1), s = kv.dim(0);
  require(kv.dim(1) == d && vv.dim(1) == d && vv.dim(0) == s,
          "attention shape mismatch: q " + shape_string(qv.shape()) + " k " + shape_string(kv.shape()) +
              " v " + shape_string(vv.shape()));
  require(heads >= 1 && d % heads == 0,
          "model width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  require(!causal || s == tq, "causal attention needs as many keys as queries");
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));

  auto weights = std::make_shared<BasicTensor<T>>(Shape{heads, tq, s});
  BasicTensor<T> out({tq, d});
  std::vector<T> scores(static_cast<std::size_t>(tq) * s);
  for (int h = 0; h < heads; ++h) {
    gemm<T>(false, true, tq, s, dh, inv_sqrt, qv.ptr() + h * dh, d, kv.ptr() + h * dh, d, T(0),
            scores.data(), s);
    if (causal) {
      for (int t = 0; t < tq; ++t)
        for (int j = t + 1; j < s; ++j) scores[static_cast<std::size_t>(t) * s + j] = -std::numeric_limits<T>::infinity();
    }
    T* wh = weights->ptr() + static_cast<std::size_t>(h) * tq * s;
    for (int t = 0; t < tq; ++t) softmax_row(scores.data() + t * s, wh + t * s, s);
    gemm<T>(false, false, tq, dh, s, T(1), wh, s, vv.ptr() + h * dh, d, T(0), out.ptr() + h * dh, d);
  }

  Var output = tape.record(std::move(out), {q, k, v}, [=](BasicTape<T>& tp, int self) {
    const T* g = tp.output_grad(self).data();
    const auto& qx = tp.value(q);
    const auto& kx = tp.value(k);
    const auto& vx = tp.value(v);
    std::vector<T> dw(static_cast<std::size_t>(tq) * s);
    for (int h = 0; h < heads; ++h) {
      const T* wh = weights->ptr() + static_cast<std::size_t>(h) * tq * s;
      if (tp.requires_grad(v)) {
        gemm<T>(true, false, s, dh, tq, T(1), wh, s, g + h * dh, d, T(1), tp.grad_buffer(v).data() + h * dh,
                d);
      }
      if (!tp.requires_grad(q) && !tp.requires_grad(k)) continue;
      gemm<T>(false, true, tq, s, dh, T(1), g + h * dh, d, vx.ptr() + h * dh, d, T(0), dw.data(), s);
      for (int t = 0; t < tq; ++t) {
        T dotp = 0;
        for (int j = 0; j < s; ++j) dotp += dw[t * s + j] * wh[t * s + j];
        for (int j = 0; j < s; ++j) dw[t * s + j] = wh[t * s + j] * (dw[t * s + j] - dotp);
      }
      if (tp.requires_grad(q)) {
        gemm<T>(false, false, tq, dh, s, inv_sqrt, dw.data(), s, kx.ptr() + h * dh, d, T(1),
                tp.grad_buffer(q).data() + h * dh, d);
      }
      if (tp.requires_grad(k)) {
        gemm<T>(true, false, s, dh, tq, inv_sqrt, dw.data(), s, qx.ptr() + h * dh, d, T(1),
                tp.grad_buffer(k).data() + h * dh, d);
      }
    }
  });
  Var wvar = tape.constant(*weights);
  return {output, wvar};
}

template <typename T>
AttentionResult multi_head_attention(BasicTape<T>& tape, Var queries, Var keys, Var values,
                                     const AttentionParams& p, int heads, bool causal) {
  const Var q = linear(tape, queries, p.wq, p.bq);
  const Var k = linear(tape, keys, p.wk, p.bk);
  const Var v = linear(tape, values, p.wv, p.bv);
  AttentionResult core = attention_core(tape, q, k, v, heads, causal);
  return {linear(tape, core.output, p.wo, p.bo), core.weights};
}

template <typename T>
double grad_check(const std::function<Var(BasicTape<T>&, Var)>& f, const BasicTensor<T>& x,
                  double epsilon) {
  if (!(epsilon > 0.0)) throw UsageError("grad_check epsilon must be positive");
  BasicTape<T> tape;
  const Var xv = tape.variable(x);
  const Var y = f(tape, xv);
  if (tape.value(y).size() != 1) {
    throw UsageError("grad_check function must return a scalar, got " +
                     shape_string(tape.value(y).shape()));
  }
  tape.backward(y);
  const BasicTensor<T> analytic = tape.grad(xv);

  auto eval = [&](const BasicTensor<T>& at) {
    BasicTape<T> t(false);
    return static_cast<double>(t.value(f(t, t.variable(at)))[0]);
  };
  double worst = 0.0;
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + static_cast<T>(epsilon);
    const double up = eval(probe);
    probe[i] = x[i] - static_cast<T>(epsilon);
    const double down = eval(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

Tensor sinusoid_2d(int h, int w, int d) {
  require(d % 4 == 0, "sinusoid_2d needs a width divisible by 4, got " + std::to_string(d));
  Tensor out({h * w, d});
  const int half = d / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float* row = out.ptr() + static_cast<std::size_t>(y * w + x) * d;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        row[2 * i] = static_cast<float>(std::sin(y * freq));
        row[2 * i + 1] = static_cast<float>(std::cos(y * freq));
        row[half + 2 * i] = static_cast<float>(std::sin(x * freq));
        row[half + 2 * i + 1] = static_cast<float>(std::cos(x * freq));
      }
    }
  }
  return out;
}

#define STROKEZS_INSTANTIATE(T)                                                                          \
  template Var conv2d<T>(BasicTape<T>&, Var, Var, int);                                                  \
  template Var add_bias<T>(BasicTape<T>&, Var, Var);                                                     \
  template Var relu<T>(BasicTape<T>&, Var);                                                              \
  template Var add<T>(BasicTape<T>&, Var, Var);                                                          \
  template Var scale<T>(BasicTape<T>&, Var, T);                                                          \
  template Var linear<T>(BasicTape<T>&, Var, Var, Var);                                                  \
  template Var layer_norm<T>(BasicTape<T>&, Var, Var, Var, T);                                           \
  template Var softmax<T>(BasicTape<T>&, Var);                                                           \
  template Var embedding<T>(BasicTape<T>&, Var, std::span<const int>);                                   \
  template Var global_avg_pool<T>(BasicTape<T>&, Var);                                                   \
  template Var reshape<T>(BasicTape<T>&, Var, Shape);                                                    \
  template Var slice_rows<T>(BasicTape<T>&, Var, int);                                                   \
  template Var sum<T>(BasicTape<T>&, Var);                                                               \
  template Var dot_constant<T>(BasicTape<T>&, Var, std::span<const T>);                                  \
  template Var cross_entropy<T>(BasicTape<T>&, Var, int);                                                \
  template Var cross_entropy_rows<T>(BasicTape<T>&, Var, std::span<const int>);                          \
  template AttentionResult attention_core<T>(BasicTape<T>&, Var, Var, Var, int, bool);                   \
  template AttentionResult multi_head_attention<T>(BasicTape<T>&, Var, Var, Var, const AttentionParams&, \
                                                   int, bool);                                           \
  template double grad_check<T>(const std::function<Var(BasicTape<T>&, Var)>&, const BasicTensor<T>&,   \
                                double);

STROKEZS_INSTANTIATE(float)
STROKEZS_INSTANTIATE(double)

#undef STROKEZS_INSTANTIATE

}  // namespace strokezs::nn
