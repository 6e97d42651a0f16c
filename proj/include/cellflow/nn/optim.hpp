#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cellflow/nn/layers.hpp"

namespace cellflow::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimiser with bias correction.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update. `grads` must be keyed exactly like `params`.
  void step(ParameterSet& params, const GradientMap& grads);
  void step(ParameterSet& params, const GradientMap& grads, double lr);

  std::int64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace cellflow::nn
