#include "cellflow/nn/layers.hpp"

#include <cmath>

#include "cellflow/error.hpp"

namespace cellflow::nn {

void ParameterSet::add(const std::string& path, Tensor value) {
  if (!entries_.emplace(path, std::move(value)).second)
    throw InvalidInput("duplicate parameter path: " + path);
}

const Tensor& ParameterSet::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw InvalidInput("unknown parameter path: " + path);
  return it->second;
}

Tensor& ParameterSet::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw InvalidInput("unknown parameter path: " + path);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

Var Binder::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  const Tensor& value = params_.at(path);
  Var v = trainable_ ? tape_.variable(value) : tape_.constant(value);
  bound_.emplace(path, v);
  return v;
}

GradientMap Binder::gradients() const {
  GradientMap out;
  for (const auto& [path, value] : params_.entries()) {
    auto it = bound_.find(path);
    out.emplace(path, it == bound_.end() ? Tensor(value.rows(), value.cols()) : tape_.grad(it->second));
  }
  return out;
}

GradientMap backward(const Var& loss, const Binder& binder) {
  loss.tape()->backward(loss);
  return binder.gradients();
}

Tensor fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = bound * (2.0 * rng.uniform() - 1.0);
  return t;
}

void Dense::init(ParameterSet& params, Rng& rng) const {
  params.add(name + ".w", fan_in_uniform(rng, in, in, out));
  if (bias) params.add(name + ".b", Tensor(1, out));
}

Var Dense::operator()(Binder& bind, const Var& x) const {
  if (x.cols() != in) {
    throw InvalidInput(name + ": expected input width " + std::to_string(in) + ", got " +
                       std::to_string(x.cols()));
  }
  Var y = matmul(x, bind(name + ".w"));
  return bias ? add(y, bind(name + ".b")) : y;
}

Tensor dense_forward(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  if (x.cols() != weight.rows())
    throw InvalidInput("dense_forward: input width does not match weight rows");
  if (bias.rows() != 1 || bias.cols() != weight.cols())
    throw InvalidInput("dense_forward: bias must be 1 x out");
  Tensor y = matmul(x, weight);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias(0, c);
  return y;
}

void Mlp::init(ParameterSet& params, Rng& rng) const {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    Dense{name + ".fc" + std::to_string(i + 1), widths[i], widths[i + 1]}.init(params, rng);
}

Var Mlp::operator()(Binder& bind, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    h = Dense{name + ".fc" + std::to_string(i + 1), widths[i], widths[i + 1]}(bind, h);
    if (i + 2 < widths.size()) h = silu(h);
  }
  return h;
}

void LayerNorm::init(ParameterSet& params) const {
  params.add(name + ".gain", Tensor(1, dim, 1.0));
  params.add(name + ".shift", Tensor(1, dim));
}

Var LayerNorm::operator()(Binder& bind, const Var& x) const {
  Var centered = sub(x, mean_rows(x));
  Var var = mean_rows(square(centered));
  Var normed = div(centered, sqrt(add_scalar(var, eps)));
  return add(mul(normed, bind(name + ".gain")), bind(name + ".shift"));
}

void AttentionBlock::init(ParameterSet& params, Rng& rng) const {
  LayerNorm{name + ".ln1", dim}.init(params);
  LayerNorm{name + ".ln2", dim}.init(params);
  for (const char* p : {".q", ".k", ".v", ".o"}) Dense{name + p, dim, dim, false}.init(params, rng);
  Mlp{name + ".ffn", {dim, ffn, dim}}.init(params, rng);
}

AttentionBlock::Output AttentionBlock::operator()(Binder& bind, const Var& tokens) const {
  if (tokens.rows() == 0) throw InvalidInput(name + ": empty token sequence");
  Var x = LayerNorm{name + ".ln1", dim}(bind, tokens);
  Var q = Dense{name + ".q", dim, dim, false}(bind, x);
  Var k = Dense{name + ".k", dim, dim, false}(bind, x);
  Var v = Dense{name + ".v", dim, dim, false}(bind, x);
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dim)));
  Var weights = softmax_rows(scores);
  Var attended = Dense{name + ".o", dim, dim, false}(bind, matmul(weights, v));
  Var h = add(tokens, attended);
  Var out = add(h, Mlp{name + ".ffn", {dim, ffn, dim}}(bind, LayerNorm{name + ".ln2", dim}(bind, h)));
  return {out, weights};
}

}  // namespace cellflow::nn
