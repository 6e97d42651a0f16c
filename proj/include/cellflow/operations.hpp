#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellflow/corpus.hpp"

namespace cellflow::ops {

/// Half-open hour range [start, end).
struct Interval {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Population standard deviation of x[start, start + window) for every start.
std::vector<double> rolling_std(std::span<const double> x, std::size_t window);

/// Every hour covered by a window whose standard deviation is >= threshold,
/// merged into sorted, disjoint, maximal intervals. window >= 2, threshold >= 0.
std::vector<Interval> detect_volatile_windows(std::span<const double> x, std::size_t window, double threshold);

/// Threshold given as a multiple of the trace's global population sigma.
std::vector<Interval> detect_relative(std::span<const double> x, std::size_t window, double sigma_multiple);

double energy_saving(std::span<const double> rho_obs, std::span<const double> rho_ctrl);
double qoe(std::span<const double> rho_obs, std::span<const double> rho_ctrl);

struct ControlPlan {
  std::vector<double> rho_ctrl;
  std::vector<Interval> windows;
  double eta = 0.0;
  double qoe = 1.0;
};

/// Generated target inside the windows (clamped to [0,1]), observation elsewhere.
/// rho_obs must lie in [0,1]; windows must be sorted, disjoint and inside the horizon.
ControlPlan build_control(std::span<const double> rho_obs, std::span<const double> target,
                          std::span<const Interval> windows);

/// Raw load divided by capacity (> 0), clamped to [0,1].
std::vector<double> normalize_load(std::span<const double> raw, double capacity);

struct SiteSimulation {
  std::string site_id;
  double capacity = 0.0;
  double threshold = 0.0;  // absolute, on the normalised trace
  std::vector<double> rho_obs;
  ControlPlan plan;
};

struct SimulationParams {
  std::size_t window = 6;
  double sigma_multiple = 1.0;
  std::optional<double> threshold;  // absolute; takes precedence over sigma_multiple
};

/// Capacity defaults to the site's observed maximum.
SiteSimulation simulate_site(const corpus::FleetSite& site, const SimulationParams& p);

struct FleetSimulation {
  SimulationParams params;
  std::vector<SiteSimulation> sites;
  double eta = 0.0;  // over summed fleet load
  double qoe = 1.0;
};
FleetSimulation simulate_fleet(std::span<const corpus::FleetSite> fleet, const SimulationParams& p);

struct SweepPoint {
  double sigma_multiple = 0.0;
  double eta = 0.0;
  double qoe = 0.0;
};
std::vector<SweepPoint> sweep_thresholds(std::span<const corpus::FleetSite> fleet, std::size_t window,
                                         std::span<const double> multiples);

/// Largest eta among points with qoe >= min_qoe; nullptr if none qualifies.
const SweepPoint* best_tradeoff(std::span<const SweepPoint> sweep, double min_qoe);

struct Overload {
  std::size_t site = 0;
  std::size_t hour = 0;
  double excess = 0.0;
};

struct BalanceResult {
  std::vector<std::vector<double>> load;  // [site][hour]
  std::vector<Overload> unresolved;
};

/// Per hour, moves load above capacity to the least-loaded neighbour with headroom
/// until nothing is overloaded or no overloaded site can shed. Sites are processed
/// by descending overload, ties by site_id. Hourly totals are conserved.
BalanceResult balance_load(const std::vector<std::vector<double>>& load, std::span<const double> capacity,
                           const std::vector<std::vector<std::size_t>>& neighbours,
                           std::span<const std::string> site_ids);

}  // namespace cellflow::ops
