#include "cellflow/operations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellflow/error.hpp"

namespace cellflow::ops {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("observed and controlled traces differ in length");
  if (a.empty()) throw InvalidInput("empty load trace");
}

double sum(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0); }

double population_std(std::span<const double> x) {
  const double mean = sum(x) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(x.size()));
}

}  // namespace

std::vector<double> rolling_std(std::span<const double> x, std::size_t window) {
  if (window < 2) throw InvalidInput("volatility window must be >= 2 hours");
  std::vector<double> out;
  if (x.size() < window) return out;
  out.reserve(x.size() - window + 1);
  for (std::size_t s = 0; s + window <= x.size(); ++s) out.push_back(population_std(x.subspan(s, window)));
  return out;
}

std::vector<Interval> detect_volatile_windows(std::span<const double> x, std::size_t window, double threshold) {
  if (!(threshold >= 0.0)) throw InvalidInput("volatility threshold must be >= 0");
  const auto sd = rolling_std(x, window);
  std::vector<char> hot(x.size(), 0);
  for (std::size_t s = 0; s < sd.size(); ++s)
    if (sd[s] >= threshold) std::fill(hot.begin() + s, hot.begin() + s + window, 1);
  std::vector<Interval> out;
  for (std::size_t t = 0; t < hot.size();) {
    if (!hot[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < hot.size() && hot[e]) ++e;
    out.push_back({t, e});
    t = e;
  }
  return out;
}

std::vector<Interval> detect_relative(std::span<const double> x, std::size_t window, double sigma_multiple) {
  if (!(sigma_multiple >= 0.0)) throw InvalidInput("volatility threshold must be >= 0");
  if (x.empty()) return {};
  return detect_volatile_windows(x, window, sigma_multiple * population_std(x));
}

double energy_saving(std::span<const double> rho_obs, std::span<const double> rho_ctrl) {
  check_pair(rho_obs, rho_ctrl);
  const double obs = sum(rho_obs);
  if (!(obs > 0.0)) throw InvalidInput("energy saving is undefined when the observed load sums to 0");
  return 1.0 - sum(rho_ctrl) / obs;
}

double qoe(std::span<const double> rho_obs, std::span<const double> rho_ctrl) {
  check_pair(rho_obs, rho_ctrl);
  const double obs = sum(rho_obs);
  if (!(obs > 0.0)) throw InvalidInput("QoE is undefined when the observed load sums to 0");
  double shortfall = 0.0;
  for (std::size_t i = 0; i < rho_obs.size(); ++i) shortfall += std::max(rho_obs[i] - rho_ctrl[i], 0.0);
  return 1.0 - shortfall / obs;
}

ControlPlan build_control(std::span<const double> rho_obs, std::span<const double> target,
                          std::span<const Interval> windows) {
  if (rho_obs.size() != target.size()) throw InvalidInput("observed and target traces differ in length");
  for (double v : rho_obs)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("observed load must lie in [0,1]");
  for (double v : target)
    if (!std::isfinite(v)) throw InvalidInput("target load contains a non-finite value");
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (w.start >= w.end || w.end > rho_obs.size()) throw InvalidInput("window out of range or empty");
    if (i > 0 && w.start < prev_end) throw InvalidInput("windows must be sorted and disjoint");
    prev_end = w.end;
  }
  ControlPlan plan;
  plan.windows.assign(windows.begin(), windows.end());
  plan.rho_ctrl.assign(rho_obs.begin(), rho_obs.end());
  for (const auto& w : windows)
    for (std::size_t t = w.start; t < w.end; ++t) plan.rho_ctrl[t] = std::clamp(target[t], 0.0, 1.0);
  plan.eta = energy_saving(rho_obs, plan.rho_ctrl);
  plan.qoe = qoe(rho_obs, plan.rho_ctrl);
  return plan;
}

std::vector<double> normalize_load(std::span<const double> raw, double capacity) {
  if (!(capacity > 0.0)) throw InvalidInput("capacity must be > 0");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::clamp(raw[i] / capacity, 0.0, 1.0);
  return out;
}

SiteSimulation simulate_site(const corpus::FleetSite& site, const SimulationParams& p) {
  if (site.observed.size() != site.forecast.size()) throw InvalidInput(site.site_id + ": forecast length differs");
  if (site.observed.empty()) throw InvalidInput(site.site_id + ": empty trace");
  SiteSimulation s;
  s.site_id = site.site_id;
  s.capacity = *std::max_element(site.observed.begin(), site.observed.end());
  s.rho_obs = normalize_load(site.observed, s.capacity);
  s.threshold = p.threshold ? *p.threshold : p.sigma_multiple * population_std(s.rho_obs);
  const auto windows = detect_volatile_windows(s.rho_obs, p.window, s.threshold);
  s.plan = build_control(s.rho_obs, normalize_load(site.forecast, s.capacity), windows);
  return s;
}

FleetSimulation simulate_fleet(std::span<const corpus::FleetSite> fleet, const SimulationParams& p) {
  if (fleet.empty()) throw InvalidInput("empty fleet");
  FleetSimulation out;
  out.params = p;
  std::vector<double> obs, ctrl;
  for (const auto& site : fleet) {
    out.sites.push_back(simulate_site(site, p));
    const auto& s = out.sites.back();
    obs.insert(obs.end(), s.rho_obs.begin(), s.rho_obs.end());
    ctrl.insert(ctrl.end(), s.plan.rho_ctrl.begin(), s.plan.rho_ctrl.end());
  }
  out.eta = energy_saving(obs, ctrl);
  out.qoe = qoe(obs, ctrl);
  return out;
}

std::vector<SweepPoint> sweep_thresholds(std::span<const corpus::FleetSite> fleet, std::size_t window,
                                         std::span<const double> multiples) {
  std::vector<SweepPoint> out;
  for (double m : multiples) {
    auto sim = simulate_fleet(fleet, {window, m, std::nullopt});
    out.push_back({m, sim.eta, sim.qoe});
  }
  return out;
}

const SweepPoint* best_tradeoff(std::span<const SweepPoint> sweep, double min_qoe) {
  const SweepPoint* best = nullptr;
  for (const auto& p : sweep)
    if (p.qoe >= min_qoe && (!best || p.eta > best->eta)) best = &p;
  return best;
}

BalanceResult balance_load(const std::vector<std::vector<double>>& load, std::span<const double> capacity,
                           const std::vector<std::vector<std::size_t>>& neighbours,
                           std::span<const std::string> site_ids) {
  const std::size_t n = load.size();
  if (capacity.size() != n || neighbours.size() != n || site_ids.size() != n)
    throw InvalidInput("balance_load: per-site inputs differ in length");
  for (double c : capacity)
    if (!(c > 0.0)) throw InvalidInput("capacities must be > 0");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : neighbours[i]) {
      if (j >= n || j == i) throw InvalidInput("neighbour index out of range");
      if (std::find(neighbours[j].begin(), neighbours[j].end(), i) == neighbours[j].end())
        throw InvalidInput("neighbour graph must be symmetric");
    }
  const std::size_t hours = n ? load[0].size() : 0;
  for (const auto& row : load)
    if (row.size() != hours) throw InvalidInput("balance_load: sites have different horizons");

  BalanceResult out{load, {}};
  auto tol = [&](std::size_t i) { return 1e-12 * capacity[i]; };
  for (std::size_t h = 0; h < hours; ++h) {
    auto at = [&](std::size_t i) -> double& { return out.load[i][h]; };
    auto receiver = [&](std::size_t i) {
      std::size_t best = n;
      for (std::size_t j : neighbours[i]) {
        if (capacity[j] - at(j) <= tol(j)) continue;
        if (best == n || at(j) < at(best) || (at(j) == at(best) && site_ids[j] < site_ids[best])) best = j;
      }
      return best;
    };
    for (std::size_t guard = 0; guard < 4 * n * n + 4; ++guard) {
      std::size_t src = n, dst = n;
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double excess = at(i) - capacity[i];
        if (excess <= tol(i)) continue;
        const std::size_t r = receiver(i);
        if (r == n) continue;
        if (src == n || excess > worst || (excess == worst && site_ids[i] < site_ids[src])) src = i, dst = r, worst = excess;
      }
      if (src == n) break;
      const double moved = std::min(worst, capacity[dst] - at(dst));
      at(src) -= moved;
      at(dst) += moved;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (at(i) - capacity[i] > tol(i)) out.unresolved.push_back({i, h, at(i) - capacity[i]});
  }
  return out;
}

}  // namespace cellflow::ops
