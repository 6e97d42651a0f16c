#include <algorithm>
#include <cmath>
#include <map>

#include "cellflow/error.hpp"
#include "cellflow/nn/rng.hpp"
#include "cellflow/planning.hpp"
#include "doctest.h"

using namespace cellflow;
using namespace cellflow::planning;
using corpus::GridCell;

namespace {

GridCell cell(std::string id, double lat, double lon, bool feasible = true) {
  GridCell c;
  c.cell_id = std::move(id);
  c.latitude = lat;
  c.longitude = lon;
  c.feasible = feasible;
  return c;
}

std::vector<double> random_series(nn::Rng& rng, std::size_t n = 672) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform() * 3.0;
  return x;
}

/// Best total utility over all k-subsets, by enumeration.
double brute_force_best(const std::vector<double>& values, std::size_t k) {
  const std::size_t n = values.size();
  double best = -1e300;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s += values[i];
    best = std::max(best, s);
  }
  return best;
}

}  // namespace

TEST_CASE("haversine and polygon containment") {
  CHECK(haversine_m({31.2, 121.4}, {31.2, 121.4}) == 0.0);
  // One degree of latitude is about 111.2 km.
  CHECK(haversine_m({0.0, 0.0}, {1.0, 0.0}) == doctest::Approx(111194.9).epsilon(1e-5));
  Polygon sq{"sq", {{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
  CHECK(contains(sq, {0.5, 0.5}));
  CHECK_FALSE(contains(sq, {1.5, 0.5}));
  CHECK_FALSE(contains(sq, {0.5, -0.1}));
}

TEST_CASE("filter_feasible: flags, distance and exclusion predicates") {
  std::vector<GridCell> all_ok;
  for (int i = 0; i < 5; ++i) all_ok.push_back(cell("c" + std::to_string(i), 31.2 + 0.01 * i, 121.4));
  CHECK(filter_feasible(all_ok).size() == 5);

  auto none = all_ok;
  for (auto& c : none) c.feasible = false;
  auto kept = filter_feasible(none);
  CHECK(kept.empty());
  CHECK_THROWS_AS(rank_topk(kept, builtin_utility("lsi"), {}, [](const GridCell&, std::uint64_t) {
    return std::vector<double>(672, 1.0);
  }), InvalidInput);
  CHECK_THROWS_AS(filter_feasible(std::vector<GridCell>{}), InvalidInput);

  // Mixed grid of 10: compare with a direct evaluation of each predicate.
  nn::Rng rng(3);
  std::vector<GridCell> grid;
  for (int i = 0; i < 10; ++i)
    grid.push_back(cell("m" + std::to_string(i), 31.20 + 0.03 * rng.uniform(), 121.40 + 0.03 * rng.uniform(), i % 3 != 0));
  FeasibilityRules rules;
  rules.deployed = {{31.21, 121.41}};
  rules.min_distance_m = 600.0;
  rules.exclusions = {{"park", {{31.22, 121.42}, {31.22, 121.44}, {31.24, 121.44}, {31.24, 121.42}}}};
  std::vector<std::string> expect;
  for (const auto& c : grid) {
    const bool far = haversine_m({c.latitude, c.longitude}, rules.deployed[0]) >= 600.0;
    const bool in_park = c.latitude > 31.22 && c.latitude < 31.24 && c.longitude > 121.42 && c.longitude < 121.44;
    if (c.feasible && far && !in_park) expect.push_back(c.cell_id);
  }
  std::vector<std::string> got;
  for (const auto& c : filter_feasible(grid, rules)) got.push_back(c.cell_id);
  CHECK(got == expect);
  CHECK(got.size() < 10);
}

TEST_CASE("filter_feasible on the demo grid keeps the seven flagged cells") {
  auto grid = corpus::synth_demo_grid();
  auto kept = filter_feasible(grid);
  CHECK(kept.size() == 7);
  for (const auto& c : kept) CHECK(c.feasible);
}

TEST_CASE("lsi examples") {
  CHECK(lsi(std::vector<double>(672, 0.25)) == 1e6);
  std::vector<double> alt(672);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = static_cast<double>(i % 2);
  CHECK(lsi(alt) == doctest::Approx(1.0 / (0.5 + 1e-6)).epsilon(1e-14));
  nn::Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    auto x = random_series(rng);
    auto y = x;
    const double c = 1.0 + 5.0 * rng.uniform() + 1e-3;
    for (auto& v : y) v *= c;
    CHECK(lsi(y) < lsi(x));
  }
  std::vector<double> bad(672, 0.0);
  bad[5] = std::nan("");
  CHECK_THROWS_AS(lsi(bad), InvalidInput);
}

TEST_CASE("total volume and peak load") {
  std::vector<double> ones(672, 1.0);
  CHECK(total_volume(ones) == 672.0);
  CHECK(peak_load(ones) == 1.0);
  std::vector<double> spike(672, 0.0);
  spike[100] = 10.0;
  CHECK(total_volume(spike) == 10.0);
  CHECK(peak_load(spike) == 10.0);
  nn::Rng rng(5);
  auto x = random_series(rng);
  double s = 0.0, m = x[0];
  for (double v : x) s += v, m = std::max(m, v);
  CHECK(total_volume(x) == doctest::Approx(s).epsilon(1e-15));
  CHECK(peak_load(x) == m);
}

TEST_CASE("builtin utilities") {
  CHECK(builtin_utility("lsi").name == "lsi");
  CHECK(builtin_utility("total-volume").fn(std::vector<double>(4, 2.0)) == 8.0);
  CHECK(builtin_utility("peak-load").fn(std::vector<double>{1.0, 5.0, 2.0}) == 5.0);
  CHECK_THROWS_AS(builtin_utility("revenue"), InvalidInput);
}

TEST_CASE("top_k: three cells, K = 2") {
  auto r = top_k({{"1", 5.0, 0}, {"2", 1.0, 0}, {"3", 3.0, 0}}, 2);
  REQUIRE(r.size() == 2);
  CHECK(r[0].cell_id == "1");
  CHECK(r[1].cell_id == "3");
  CHECK(brute_force_best({5.0, 1.0, 3.0}, 2) == r[0].value + r[1].value);
  // Ties resolve by id.
  auto t = top_k({{"b", 1.0, 0}, {"a", 1.0, 0}, {"c", 0.5, 0}}, 3);
  CHECK(t[0].cell_id == "a");
  CHECK(t[1].cell_id == "b");
}

TEST_CASE("rank_topk matches brute-force subset enumeration") {
  nn::Rng rng(6);
  // Synthetic traffic per (cell, seed) so the test exercises seeding end to end.
  TrafficFn traffic = [](const GridCell& c, std::uint64_t seed) {
    nn::Rng r(seed);
    const double level = 0.5 + (nn::hash_string(c.cell_id) % 100) / 50.0;
    std::vector<double> x(672);
    for (auto& v : x) v = level * (1.0 + 0.3 * r.normal());
    return x;
  };
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const std::size_t k = 1 + rng.below(5);
    std::vector<GridCell> cells;
    for (std::size_t i = 0; i < n; ++i) cells.push_back(cell("g" + std::to_string(trial) + "-" + std::to_string(i), 0, 0));
    for (const auto& name : builtin_utility_names()) {
      const Utility u = builtin_utility(name);
      const std::uint64_t seed = 100 + trial;
      auto res = rank_topk(cells, u, {k, seed, 1}, traffic);
      std::vector<double> values;
      std::map<std::string, double> by_id;
      for (const auto& c : cells) {
        const double v = u.fn(traffic(c, cell_seed(seed, c.cell_id)));
        values.push_back(v);
        by_id[c.cell_id] = v;
      }
      const std::size_t kk = std::min(k, n);
      REQUIRE(res.entries.size() == kk);
      CHECK(res.truncated == (k > n));
      double total = 0.0;
      for (std::size_t i = 0; i < kk; ++i) {
        CHECK(res.entries[i].value == by_id[res.entries[i].cell_id]);
        if (i > 0) CHECK(res.entries[i - 1].value >= res.entries[i].value);
        total += res.entries[i].value;
      }
      CHECK(total == doctest::Approx(brute_force_best(values, kk)).epsilon(1e-12));
    }
  }
}

TEST_CASE("rank_topk: determinism, scale invariance of LSI ordering, infeasible cells excluded") {
  auto grid = corpus::synth_demo_grid();
  TrafficFn traffic = [](const GridCell& c, std::uint64_t seed) {
    nn::Rng r(seed);
    std::vector<double> x(672);
    const double amp = 1.0 + c.latitude - 31.0;
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = 1.0 + amp * std::sin(0.26 * t) * std::abs(r.normal());
    return x;
  };
  TrafficFn scaled = [&](const GridCell& c, std::uint64_t seed) {
    auto x = traffic(c, seed);
    for (auto& v : x) v *= 3.5;
    return x;
  };
  const Utility u = builtin_utility("lsi");
  auto a = rank_topk(grid, u, {3, 9, 1}, traffic);
  auto b = rank_topk(grid, u, {3, 9, 1}, traffic);
  auto c = rank_topk(grid, u, {3, 9, 1}, scaled);
  REQUIRE(a.entries.size() == 3);
  CHECK(a.candidates == 7);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.entries[i].cell_id == b.entries[i].cell_id);
    CHECK(a.entries[i].value == b.entries[i].value);
    CHECK(a.entries[i].cell_id == c.entries[i].cell_id);
    CHECK(c.entries[i].value < a.entries[i].value);
  }
  auto all = rank_topk(grid, u, {50, 9, 1}, traffic);
  CHECK(all.entries.size() == 7);
  CHECK(all.truncated);
  for (const auto& e : all.entries)
    for (const auto& g : grid)
      if (g.cell_id == e.cell_id) CHECK(g.feasible);
  CHECK_THROWS_AS(rank_topk(grid, u, {0, 9, 1}, traffic), InvalidInput);

  auto multi = rank_topk(grid, u, {3, 9, 4}, traffic);
  CHECK(multi.entries.size() == 3);
}
