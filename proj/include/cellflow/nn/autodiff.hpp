#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "cellflow/nn/tensor.hpp"

namespace cellflow::nn {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only computation graph. Nodes are recorded in evaluation order, so
/// reverse iteration is a valid topological order for backpropagation.
/// Nodes whose inputs are all constants drop their backward closure, which
/// makes inference on a tape of constants allocation-light.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient of the last backward() target; zeros if the node was unreachable.
  Tensor grad(const Var& v) const;

  /// Reverse sweep from a 1x1 loss. Clears gradients from any earlier sweep.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op authoring.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  void accumulate(const Var& target, const Tensor& g);
  Tensor& grad_buffer(const Var& target);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast a dimension of size 1 against the other operand.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var negate(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var silu(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Clamp to [lo, hi]; gradient passes only where the input is strictly inside.
Var clamp(const Var& a, double lo, double hi);
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row reduction, result rows x 1.
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
/// Per-column reduction, result 1 x cols.
Var sum_cols(const Var& a);
Var mean_cols(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
/// Repeat the columns block `reps` times: [a a ... a].
Var tile_cols(const Var& a, std::size_t reps);

/// Each row divided by sqrt(|row|^2 + eps).
Var l2_normalize_rows(const Var& a, double eps = 1e-24);

}  // namespace cellflow::nn
