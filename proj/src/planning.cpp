#include "cellflow/planning.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cellflow/error.hpp"
#include "cellflow/nn/rng.hpp"

namespace cellflow::planning {

namespace {

void check_series(std::span<const double> x) {
  if (x.empty()) throw InvalidInput("utility of an empty sequence");
  for (double v : x)
    if (!std::isfinite(v)) throw InvalidInput("utility input contains a non-finite value");
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

double haversine_m(GeoPoint a, GeoPoint b) {
  const double dlat = radians(b.latitude - a.latitude);
  const double dlon = radians(b.longitude - a.longitude);
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(radians(a.latitude)) * std::cos(radians(b.latitude)) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * 6371000.0 * std::asin(std::min(1.0, std::sqrt(s)));
}

bool contains(const Polygon& poly, GeoPoint p) {
  const auto& v = poly.vertices;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const bool crosses = (v[i].latitude > p.latitude) != (v[j].latitude > p.latitude);
    if (crosses) {
      const double lon_at = v[j].longitude + (p.latitude - v[j].latitude) * (v[i].longitude - v[j].longitude) /
                                                 (v[i].latitude - v[j].latitude);
      if (p.longitude < lon_at) inside = !inside;
    }
  }
  return inside;
}

bool passes(const corpus::GridCell& cell, const FeasibilityRules& rules) {
  if (rules.respect_flag && !cell.feasible) return false;
  const GeoPoint at{cell.latitude, cell.longitude};
  for (const auto& site : rules.deployed)
    if (haversine_m(at, site) < rules.min_distance_m) return false;
  for (const auto& poly : rules.exclusions)
    if (poly.vertices.size() >= 3 && contains(poly, at)) return false;
  return true;
}

std::vector<corpus::GridCell> filter_feasible(std::span<const corpus::GridCell> grid, const FeasibilityRules& rules) {
  if (grid.empty()) throw InvalidInput("filter_feasible: empty grid");
  if (rules.min_distance_m < 0.0) throw InvalidInput("minimum distance must be >= 0");
  std::vector<corpus::GridCell> out;
  for (const auto& cell : grid) {
    if (!passes(cell, rules)) continue;
    out.push_back(cell);
    out.back().feasible = true;
  }
  return out;
}

double lsi(std::span<const double> x, double eps) {
  check_series(x);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return 1.0 / (std::sqrt(var / static_cast<double>(x.size())) + eps);
}

double total_volume(std::span<const double> x) {
  check_series(x);
  double s = 0.0;
  for (double v : x) s += v;
  return s;
}

double peak_load(std::span<const double> x) {
  check_series(x);
  return *std::max_element(x.begin(), x.end());
}

Utility builtin_utility(std::string_view name) {
  if (name == "lsi") return {"lsi", [](std::span<const double> x) { return lsi(x); }};
  if (name == "total-volume") return {"total-volume", total_volume};
  if (name == "peak-load") return {"peak-load", peak_load};
  throw InvalidInput("unknown utility '" + std::string(name) + "' (expected lsi, total-volume or peak-load)");
}

std::vector<std::string> builtin_utility_names() { return {"lsi", "total-volume", "peak-load"}; }

std::uint64_t cell_seed(std::uint64_t run_seed, std::string_view cell_id) {
  return nn::derive_seed(run_seed, nn::hash_string(cell_id));
}

std::vector<RankedCell> top_k(std::vector<RankedCell> scored, std::size_t k) {
  std::sort(scored.begin(), scored.end(), [](const RankedCell& a, const RankedCell& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.cell_id < b.cell_id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

RankingResult rank_topk(std::span<const corpus::GridCell> cells, const Utility& utility, const RankOptions& opt,
                        const TrafficFn& traffic) {
  if (opt.k == 0) throw InvalidInput("K must be >= 1");
  if (opt.samples == 0) throw InvalidInput("samples must be >= 1");
  if (!utility.fn) throw InvalidInput("utility has no scoring function");
  std::vector<RankedCell> scored;
  for (const auto& cell : cells) {
    if (!cell.feasible) continue;
    const std::uint64_t seed = cell_seed(opt.seed, cell.cell_id);
    double value = 0.0;
    for (std::size_t s = 0; s < opt.samples; ++s) {
      const std::uint64_t draw = opt.samples == 1 ? seed : nn::derive_seed(seed, s);
      const auto x = traffic(cell, draw);
      value += utility.fn(x);
    }
    scored.push_back({cell.cell_id, value / static_cast<double>(opt.samples), seed});
  }
  if (scored.empty()) throw InvalidInput("no feasible cells to rank");

  RankingResult out;
  out.k = opt.k;
  out.utility = utility.name;
  out.run_seed = opt.seed;
  out.candidates = scored.size();
  out.truncated = opt.k > scored.size();
  out.entries = top_k(std::move(scored), opt.k);
  return out;
}

}  // namespace cellflow::planning
