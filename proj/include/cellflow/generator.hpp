#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellflow/decomposition.hpp"
#include "cellflow/nn/autodiff.hpp"
#include "cellflow/nn/layers.hpp"
#include "cellflow/nn/rng.hpp"

namespace cellflow::gen {

inline constexpr std::size_t kLevels = 3;
inline constexpr std::size_t kPeakClasses = 24;

/// One level of the hierarchy: 1 = daily (48), 2 = weekly (168), 3 = residual (672).
struct LevelConfig {
  int level = 1;
  std::size_t length = decomp::kDailyTargetLen;
  std::size_t steps = 32;     // Euler steps N at inference
  double clip = 6.0;          // symmetric clip bound b
  double flow_weight = 1.0;   // lambda for this level's flow-matching loss
  double init_noise = 1.0;    // scale of the starting noise when sampling
  std::size_t train_draws = 1;  // (t, x0) pairs drawn per site for the flow-matching loss

  double step_size() const { return 1.0 / static_cast<double>(steps); }
  void validate() const;
};

std::array<LevelConfig, kLevels> default_levels();

/// Weights of the auxiliary terms. All must be >= 0.
struct AuxWeights {
  double bnd = 0.1;
  double tmp = 0.1;
  double per = 0.1;
  double bias = 0.1;
  double peak = 1.0;
  double corr = 0.1;
};

struct GeneratorConfig {
  std::size_t context_dim = 32;
  std::size_t hidden = 256;
  std::size_t time_features = 16;
  std::array<LevelConfig, kLevels> levels = default_levels();
  AuxWeights aux;
  std::size_t train_sampling_steps = 8;  // Euler steps for the in-training generation pass
  bool peak_head = true;                 // false ablates h* from level 3 and drops the peak loss
  bool gated_skip = true;                // time-gated linear paths from x and the condition to the velocity
  std::size_t batch = 4;
  double lr = 3e-3;
  double lr_final = 3e-4;  // cosine-decayed target at the last epoch

  void validate() const;
  /// Width of the condition block feeding level `level`'s velocity net.
  std::size_t condition_width(int level) const;
};

struct GeneratorModel {
  GeneratorConfig config;
  nn::ParameterSet params;
  bool trained = false;
  std::size_t epochs = 0;
  std::uint64_t train_seed = 0;
};

GeneratorModel init_generator(const GeneratorConfig& config, std::uint64_t seed);

struct Conditions {
  std::vector<double> c1, c2, c3;
};
/// c_l = C P_l + b_l for three independent d -> d maps.
Conditions project_conditions(const GeneratorModel& model, std::span<const double> context);

struct PeakPrediction {
  std::vector<double> q;              // 24 probabilities (empty when ablated)
  std::optional<std::size_t> h_star;  // withheld when the head is disabled
  bool ablated = false;
};
/// q = softmax(C W_C), h* = argmax q with the lowest index winning ties.
PeakPrediction peak_head(const GeneratorModel& model, std::span<const double> context);

/// argmax with lowest-index tie breaking.
std::size_t argmax(std::span<const double> v);

/// Sinusoidal features sin(pi 2^k t), cos(pi 2^k t) for k = 0 .. n/2 - 1.
std::vector<double> time_features(double t, std::size_t n);

/// Coarser-level inputs a level conditions on. Level 1 uses none, level 2 uses d,
/// level 3 uses d, w, u and h* (if present).
struct CoarseInputs {
  std::vector<double> d;
  std::vector<double> w;
  std::vector<double> u;
  std::optional<std::size_t> h_star;
};

struct FlowSample {
  std::vector<double> x0, x1, xt, v_star;
  double t = 0.0;
};
/// x_t = t x1 + (1 - t) x0, v* = x1 - x0.
FlowSample make_flow_sample(std::span<const double> x0, std::span<const double> x1, double t);

/// Velocity oracle: (x, t) -> v. Used both for injected test fields and the trained nets.
using VelocityField = std::function<std::vector<double>(std::span<const double> x, double t)>;

/// Mean squared error between field(x_t, t) and v*.
double flow_matching_loss(const VelocityField& field, const FlowSample& s);

/// The trained velocity net of one level as a VelocityField.
VelocityField level_field(const GeneratorModel& model, int level, const Conditions& cond,
                          const CoarseInputs& coarse);

/// Flow-matching loss of one level on one site with t ~ U(0,1), x0 ~ N(0,I) drawn from rng.
/// Targets must come from decompose_targets.
double flow_loss_level(const GeneratorModel& model, int level, const decomp::DecompositionTargets& targets,
                       const Conditions& cond, std::optional<std::size_t> h_star, nn::Rng& rng);

struct Trajectory {
  std::vector<std::vector<double>> states;  // states[k] after step k; states[0] is x0
  const std::vector<double>& final() const { return states.back(); }
};
/// x <- clip(x + dt field(x, k/N), -b, b) for k = 1..N.
Trajectory euler_sample(std::vector<double> x0, const VelocityField& field, std::size_t steps, double clip);

/// Draws the level's starting noise (scaled by init_noise) and integrates the level net.
std::vector<double> sample_level(const GeneratorModel& model, int level, const Conditions& cond,
                                 const CoarseInputs& coarse, nn::Rng& rng);

struct GeneratedTraffic {
  std::vector<double> d, w, u, r, x;  // 48, 168, 672, 672, 672
  std::optional<std::size_t> h_star;
  std::vector<double> q;
};

struct GenerateOptions {
  bool require_trained = true;
  bool zero_residual = false;  // ablation hook: force level 3 output to 0
};

/// Levels 1 -> 2 -> 3, u = Rep(w), x = max(u + r, 0). Deterministic in (model, C, seed).
GeneratedTraffic generate(const GeneratorModel& model, std::span<const double> context, std::uint64_t seed,
                          const GenerateOptions& opt = {});

struct AuxLosses {
  double bnd = 0, tmp = 0, per = 0, bias = 0, peak = 0, corr = 0;
};
/// Repo-level definitions of the six auxiliary terms (see docs/formats.md for the list).
AuxLosses auxiliary_losses(const GeneratedTraffic& g, std::span<const double> x_real, std::span<const double> q,
                           std::size_t h_true);

struct LossBreakdown {
  double total = 0.0;
  std::array<double, kLevels> flow{};
  AuxLosses aux;
};

struct GeneratorExample {
  std::string site_id;
  std::vector<double> context;  // fused C
  decomp::TrafficSeries series;
};

struct GeneratorTrainResult {
  std::vector<LossBreakdown> epochs;  // mean over minibatches, one entry per epoch
};

/// Minibatch Adam on the full objective. Deterministic under the seed.
GeneratorTrainResult train_generator(GeneratorModel& model, std::span<const GeneratorExample> corpus,
                                     std::size_t epochs, std::uint64_t seed,
                                     const std::function<void(std::size_t, const LossBreakdown&)>& progress = {});

/// Objective on one batch of examples without updating parameters.
LossBreakdown evaluate_objective(const GeneratorModel& model, std::span<const GeneratorExample> batch,
                                 std::uint64_t seed);

/// Graph-level pieces, shared by training and the gradient checks. Rows are sites.
namespace graph {

struct Batch {
  nn::Var context;                // B x d
  nn::Var d, w, u, r, x;          // B x 48/168/672/672/672
  std::vector<std::size_t> peak;  // true peak hours
};

struct Projected {
  nn::Var c1, c2, c3;
};
Projected conditions(nn::Binder& bind, const GeneratorConfig& cfg, const nn::Var& context);
nn::Var peak_logits(nn::Binder& bind, const GeneratorConfig& cfg, const nn::Var& context);

/// One-hot rows for h* (all zeros when h* is withheld).
nn::Tensor peak_one_hot(std::span<const std::optional<std::size_t>> h);

/// Condition block for a level: [c1], [c2 d], or [c3 d w u onehot(h*)].
nn::Var level_condition(const Projected& c, int level, const nn::Var& d, const nn::Var& w, const nn::Var& u,
                        const nn::Var& h_one_hot);

/// Level velocity net. `t` holds one time per row.
nn::Var velocity(nn::Binder& bind, const GeneratorConfig& cfg, int level, const nn::Var& x,
                 std::span<const double> t, const nn::Var& condition);

nn::Var flow_loss(nn::Binder& bind, const GeneratorConfig& cfg, int level, const nn::Var& x1, const nn::Var& x0,
                  std::span<const double> t, const nn::Var& condition);

/// Differentiable Euler integration with clipping.
nn::Var sample(nn::Binder& bind, const GeneratorConfig& cfg, int level, const nn::Var& x0, std::size_t steps,
               const nn::Var& condition);

struct Aux {
  nn::Var bnd, tmp, per, bias, peak, corr;
};
/// `pre` is u + r before clipping; `x_hat` = max(pre, 0).
Aux auxiliary(const nn::Var& pre, const nn::Var& x_hat, const nn::Var& x_real, const nn::Var& logits,
              std::span<const std::size_t> peak_true);

}  // namespace graph

}  // namespace cellflow::gen
