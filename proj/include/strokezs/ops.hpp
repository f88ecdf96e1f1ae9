#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "strokezs/tensor.hpp"

// Differentiable primitives. Every op validates shapes, records its output on
// the tape and registers a backward rule. Layout conventions:
//   images / feature maps: H x W x C (channels last)
//   conv kernels:          3 x 3 x Cin x Cout
//   sequences:             T x d
namespace strokezs::nn {

// 3x3 cross-correlation, padding 1. Output is ceil(H/stride) x ceil(W/stride) x Cout.
template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, int stride);

// Adds a per-channel bias over the last dimension.
template <typename T>
Var add_bias(BasicTape<T>& tape, Var x, Var bias);

template <typename T>
Var relu(BasicTape<T>& tape, Var x);

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b);

template <typename T>
Var scale(BasicTape<T>& tape, Var x, T factor);

// Row-wise affine map: x is (..., in), weight is in x out, bias (optional) is out.
template <typename T>
Var linear(BasicTape<T>& tape, Var x, Var weight, Var bias = {});

// Normalizes over the last dimension, then applies gain and bias.
template <typename T>
Var layer_norm(BasicTape<T>& tape, Var x, Var gain, Var bias, T eps = T(1e-5));

// Softmax over the last dimension.
template <typename T>
Var softmax(BasicTape<T>& tape, Var x);

// Rows of `table` (V x d) selected by ids, giving ids.size() x d.
template <typename T>
Var embedding(BasicTape<T>& tape, Var table, std::span<const int> ids);

// H x W x C -> C, mean over spatial positions.
template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var x);

// View with a new shape of equal size; gradient passes through unchanged.
template <typename T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape);

// First `rows` rows of a (rows_total x d) tensor.
template <typename T>
Var slice_rows(BasicTape<T>& tape, Var x, int rows);

template <typename T>
Var sum(BasicTape<T>& tape, Var x);

// sum_i x_i * weights_i against a constant weight vector.
template <typename T>
Var dot_constant(BasicTape<T>& tape, Var x, std::span<const T> weights);

// -log softmax(logits)[target] for a length-K logit vector.
template <typename T>
Var cross_entropy(BasicTape<T>& tape, Var logits, int target);

// Sum of per-row cross entropies for an R x K logit matrix.
template <typename T>
Var cross_entropy_rows(BasicTape<T>& tape, Var logits, std::span<const int> targets);

struct AttentionResult {
  Var output;   // T x d
  Var weights;  // heads x T x S, value only (no gradient flows through it)
};

// Scaled dot-product attention on already-projected q (T x d), k and v (S x d),
// split into `heads` groups of d/heads channels. With `causal`, query t only
// sees keys 0..t (requires S == T).
template <typename T>
AttentionResult attention_core(BasicTape<T>& tape, Var q, Var k, Var v, int heads, bool causal);

struct AttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Projects queries/keys/values, attends per head, concatenates heads and
// projects back to d.
template <typename T>
AttentionResult multi_head_attention(BasicTape<T>& tape, Var queries, Var keys, Var values,
                                     const AttentionParams& params, int heads, bool causal = false);

// Central-difference gradient check of a scalar function at x. Returns the
// largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<Var(BasicTape<T>&, Var)>& f, const BasicTensor<T>& x,
                  double epsilon);

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

// Fixed 2-D sinusoidal position table of shape (h*w) x d. The first half of
// the channels encodes the row, the second half the column.
Tensor sinusoid_2d(int h, int w, int d);

}  // namespace strokezs::nn
