#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "strokezs/error.hpp"

namespace strokezs::nn {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor. The element type is a template parameter so the
// same graph code can be run in double precision by gradient checks; the
// model itself always uses float.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw UsageError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Same data, new shape of equal element count.
  BasicTensor reshaped(Shape shape) const& {
    return BasicTensor(std::move(shape), data_);
  }
  BasicTensor reshaped(Shape shape) && {
    return BasicTensor(std::move(shape), std::move(data_));
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T value) noexcept { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

// Handle to a node recorded on a tape.
struct Var {
  int index = -1;
  bool valid() const noexcept { return index >= 0; }
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// the node list is already topologically sorted; backward walks it in exact
// reverse. A tape belongs to one thread.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  // Receives the tape and the index of the node whose grad is being pushed
  // to its inputs.
  using BackwardFn = std::function<void(BasicTape&, int)>;

  // With record_gradients = false no backward closures are kept and every
  // node is treated as a constant; used for inference.
  explicit BasicTape(bool record_gradients = true) : recording_(record_gradients) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(TensorT value) { return push(std::move(value), false, {}); }

  Var variable(TensorT value) { return push(std::move(value), recording_, {}); }

  // Records an op output. The backward rule is only kept when some input
  // requires a gradient.
  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    if (recording_) {
      for (Var v : inputs) needs = needs || node(v).requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const TensorT& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Accumulated gradient; an all-zero tensor when nothing flowed to v.
  TensorT grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return TensorT(n.value.shape());
    return n.grad;
  }

  // Mutable gradient buffer for backward rules; allocated on first use.
  std::span<T> grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = TensorT(n.value.shape());
    return n.grad.data();
  }

  // Gradient of the node being processed (read-only for backward rules).
  std::span<const T> output_grad(int index) const { return nodes_[static_cast<std::size_t>(index)].grad.data(); }

  // Seeds d(out)/d(out) = 1 and propagates. `out` must be a scalar.
  void backward(Var out) {
    if (node(out).value.size() != 1) {
      throw UsageError("backward requires a scalar output, got shape " +
                       shape_string(node(out).value.shape()));
    }
    grad_buffer(out)[0] += T(1);
    for (int i = out.index; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Smallest |input| seen by a piecewise-linear op on this tape. Finite
  // differences are only valid when the step stays well inside that margin.
  double kink_margin() const noexcept { return kink_margin_; }
  void note_kink_distance(double d) noexcept { kink_margin_ = std::min(kink_margin_, d); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(TensorT value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), TensorT{}, std::move(backward), requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) {
    check(v);
    return nodes_[static_cast<std::size_t>(v.index)];
  }
  const Node& node(Var v) const {
    check(v);
    return nodes_[static_cast<std::size_t>(v.index)];
  }
  void check(Var v) const {
    if (v.index < 0 || static_cast<std::size_t>(v.index) >= nodes_.size()) {
      throw UsageError("invalid tape variable " + std::to_string(v.index));
    }
  }

  std::vector<Node> nodes_;
  bool recording_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

using Tape = BasicTape<float>;

}  // namespace strokezs::nn
