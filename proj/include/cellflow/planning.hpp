#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cellflow/corpus.hpp"

namespace cellflow::planning {

struct GeoPoint {
  double latitude = 0.0;
  double longitude = 0.0;
};

/// Great-circle distance in metres (mean Earth radius 6371 km).
double haversine_m(GeoPoint a, GeoPoint b);

/// Simple polygon in lat/lon; edges join consecutive vertices and wrap around.
struct Polygon {
  std::string name;
  std::vector<GeoPoint> vertices;
};
/// Even-odd ray casting. Points on an edge may fall either way.
bool contains(const Polygon& poly, GeoPoint p);

/// Engineering constraints a candidate must pass.
struct FeasibilityRules {
  bool respect_flag = true;            // drop cells flagged infeasible in the grid file
  std::vector<GeoPoint> deployed;      // existing sites
  double min_distance_m = 0.0;         // to every deployed site
  std::vector<Polygon> exclusions;     // no-build zones
};

bool passes(const corpus::GridCell& cell, const FeasibilityRules& rules);

/// Cells passing every predicate, in grid order. Throws InvalidInput on an empty grid.
std::vector<corpus::GridCell> filter_feasible(std::span<const corpus::GridCell> grid, const FeasibilityRules& rules = {});

inline constexpr double kLsiEpsilon = 1e-6;

/// 1 / (sigma + eps) with the population standard deviation.
double lsi(std::span<const double> x, double eps = kLsiEpsilon);
double total_volume(std::span<const double> x);
double peak_load(std::span<const double> x);

using UtilityFn = std::function<double(std::span<const double>)>;

struct Utility {
  std::string name;
  UtilityFn fn;
};

/// "lsi", "total-volume" or "peak-load". Throws InvalidInput otherwise.
Utility builtin_utility(std::string_view name);
std::vector<std::string> builtin_utility_names();

struct RankedCell {
  std::string cell_id;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct RankingResult {
  std::vector<RankedCell> entries;  // descending by value, ties by cell_id
  std::size_t k = 0;
  std::string utility;
  std::uint64_t run_seed = 0;
  std::size_t candidates = 0;
  bool truncated = false;           // k exceeded the candidate count
};

/// Per-cell generation seed: derive_seed(run_seed, hash_string(cell_id)).
std::uint64_t cell_seed(std::uint64_t run_seed, std::string_view cell_id);

/// Generated 672-hour traffic for a cell under a seed.
using TrafficFn = std::function<std::vector<double>(const corpus::GridCell&, std::uint64_t seed)>;

struct RankOptions {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t samples = 1;  // > 1 scores the mean utility over independent draws
};

/// Generates and scores every feasible cell, then keeps the top k.
/// Infeasible cells are skipped; throws InvalidInput if none remain or k == 0.
RankingResult rank_topk(std::span<const corpus::GridCell> cells, const Utility& utility, const RankOptions& opt,
                        const TrafficFn& traffic);

/// Ordering and truncation on precomputed scores.
std::vector<RankedCell> top_k(std::vector<RankedCell> scored, std::size_t k);

}  // namespace cellflow::planning
