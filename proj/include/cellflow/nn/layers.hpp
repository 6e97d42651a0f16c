#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cellflow/nn/autodiff.hpp"
#include "cellflow/nn/rng.hpp"
#include "cellflow/nn/tensor.hpp"

namespace cellflow::nn {

using GradientMap = std::map<std::string, Tensor>;

/// Named parameter tensors. Paths are dotted ("gen.l3.fc1.w") and unique; the
/// map is ordered so iteration (and serialisation) is deterministic.
class ParameterSet {
 public:
  std::uint64_t seed = 0;

  void add(const std::string& path, Tensor value);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const Tensor& at(const std::string& path) const;
  Tensor& at(const std::string& path);
  const std::map<std::string, Tensor>& entries() const noexcept { return entries_; }
  std::map<std::string, Tensor>& entries() noexcept { return entries_; }
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::map<std::string, Tensor> entries_;
};

/// Binds parameters onto a tape on first use. With trainable=false they are
/// recorded as constants, which turns the graph into a plain forward pass.
class Binder {
 public:
  Binder(Tape& tape, const ParameterSet& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& path);
  Tape& tape() noexcept { return tape_; }
  bool trainable() const noexcept { return trainable_; }

  /// One entry per parameter in the set; unreached parameters get zeros.
  GradientMap gradients() const;

 private:
  Tape& tape_;
  const ParameterSet& params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

/// Runs the reverse sweep and collects gradients for every bound parameter.
GradientMap backward(const Var& loss, const Binder& binder);

/// Affine layer on row vectors: y = x W + b, W stored as in x out.
struct Dense {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  void init(ParameterSet& params, Rng& rng) const;
  Var operator()(Binder& bind, const Var& x) const;
};

Tensor dense_forward(const Tensor& weight, const Tensor& bias, const Tensor& x);

/// Dense layers with SiLU between them (none after the last).
struct Mlp {
  std::string name;
  std::vector<std::size_t> widths;

  void init(ParameterSet& params, Rng& rng) const;
  Var operator()(Binder& bind, const Var& x) const;
};

struct LayerNorm {
  std::string name;
  std::size_t dim = 0;
  double eps = 1e-5;

  void init(ParameterSet& params) const;
  Var operator()(Binder& bind, const Var& x) const;
};

/// Pre-norm transformer block: single-head self-attention then a SiLU
/// feed-forward, each wrapped in a residual connection. Tokens are rows.
struct AttentionBlock {
  std::string name;
  std::size_t dim = 0;
  std::size_t ffn = 0;

  struct Output {
    Var hidden;   // tokens x dim
    Var weights;  // tokens x tokens, row i = attention of query i
  };

  void init(ParameterSet& params, Rng& rng) const;
  Output operator()(Binder& bind, const Var& tokens) const;
};

/// Fan-in scaled uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t rows, std::size_t cols);

}  // namespace cellflow::nn
