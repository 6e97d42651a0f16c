#include "cellflow/nn/optim.hpp"

#include <cmath>

#include "cellflow/error.hpp"

namespace cellflow::nn {

void Adam::step(ParameterSet& params, const GradientMap& grads) { step(params, grads, config_.lr); }

void Adam::step(ParameterSet& params, const GradientMap& grads, double lr) {
  if (grads.size() != params.entries().size())
    throw InvalidInput("optimizer: gradient keys do not match parameter keys");
  for (const auto& [path, value] : params.entries()) {
    auto g = grads.find(path);
    if (g == grads.end()) throw InvalidInput("optimizer: missing gradient for " + path);
    if (!g->second.same_shape(value)) throw InvalidInput("optimizer: gradient shape mismatch for " + path);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [path, value] : params.entries()) {
    const Tensor& g = grads.at(path);
    Tensor& m = m_.try_emplace(path, value.rows(), value.cols()).first->second;
    Tensor& v = v_.try_emplace(path, value.rows(), value.cols()).first->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace cellflow::nn
