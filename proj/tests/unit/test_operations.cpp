#include <algorithm>
#include <cmath>

#include "cellflow/error.hpp"
#include "cellflow/nn/rng.hpp"
#include "cellflow/operations.hpp"
#include "doctest.h"

using namespace cellflow;
using namespace cellflow::ops;

namespace {

double brute_std(const std::vector<double>& x, std::size_t s, std::size_t w) {
  double m = 0.0;
  for (std::size_t i = s; i < s + w; ++i) m += x[i];
  m /= w;
  double v = 0.0;
  for (std::size_t i = s; i < s + w; ++i) v += (x[i] - m) * (x[i] - m);
  return std::sqrt(v / w);
}

}  // namespace

TEST_CASE("volatility windows: trivial cases") {
  std::vector<double> flat(672, 0.4);
  CHECK(detect_volatile_windows(flat, 6, 0.01).empty());
  auto all = detect_volatile_windows(flat, 6, 0.0);
  REQUIRE(all.size() == 1);
  CHECK(all[0] == Interval{0, 672});
  CHECK_THROWS_AS(detect_volatile_windows(flat, 6, -0.1), InvalidInput);
  CHECK_THROWS_AS(detect_volatile_windows(flat, 1, 0.1), InvalidInput);
}

TEST_CASE("volatility windows: noisy block matches a brute-force scan") {
  nn::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(672, 0.2);
    const std::size_t start = 24 + rng.below(600);
    const std::size_t block = std::min<std::size_t>(24, 672 - start);
    for (std::size_t t = start; t < start + block; ++t) x[t] += 0.3 * rng.normal();

    auto got = detect_volatile_windows(x, 6, 0.1);
    std::vector<char> hot(672, 0);
    for (std::size_t s = 0; s + 6 <= 672; ++s)
      if (brute_std(x, s, 6) >= 0.1)
        for (std::size_t t = s; t < s + 6; ++t) hot[t] = 1;
    std::vector<char> mark(672, 0);
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i > 0) CHECK(got[i - 1].end < got[i].start);
      for (std::size_t t = got[i].start; t < got[i].end; ++t) mark[t] = 1;
    }
    CHECK(mark == hot);
    // The noisy block is covered, with at most window - 1 hours of slack on each side.
    for (std::size_t t = start; t < start + block; ++t) CHECK(mark[t]);
    REQUIRE_FALSE(got.empty());
    CHECK(got.front().start + 5 >= start);
  }
}

TEST_CASE("energy saving and QoE: hand-computed cases") {
  const std::vector<double> obs{1, 1, 1, 1}, ctrl{0.5, 1, 1, 1};
  CHECK(energy_saving(obs, ctrl) == 0.125);
  CHECK(qoe(obs, ctrl) == 0.875);
  CHECK(energy_saving(obs, obs) == 0.0);
  CHECK(qoe(obs, obs) == 1.0);
  const std::vector<double> zero(4, 0.0), over{1.5, 2, 1, 1};
  CHECK(energy_saving(obs, zero) == 1.0);
  CHECK(qoe(obs, zero) == 0.0);
  CHECK(qoe(obs, over) == 1.0);
  CHECK_THROWS_AS(energy_saving(zero, obs), InvalidInput);
  CHECK_THROWS_AS(qoe(zero, obs), InvalidInput);
  CHECK_THROWS_AS(qoe(obs, std::vector<double>{1, 1}), InvalidInput);
}

TEST_CASE("eta + QoE = 1 under pure under-provisioning") {
  nn::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> obs(1 + rng.below(50)), ctrl(obs.size());
    for (std::size_t t = 0; t < obs.size(); ++t) {
      obs[t] = 0.05 + 0.95 * rng.uniform();
      ctrl[t] = obs[t] * rng.uniform();
    }
    double shortfall = 0.0, so = 0.0, sc = 0.0;
    for (std::size_t t = 0; t < obs.size(); ++t) shortfall += obs[t] - ctrl[t], so += obs[t], sc += ctrl[t];
    CHECK(shortfall == doctest::Approx(so - sc).epsilon(1e-12));
    CHECK(energy_saving(obs, ctrl) + qoe(obs, ctrl) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("build_control contract") {
  nn::Rng rng(3);
  std::vector<double> obs(48), target(48);
  for (std::size_t t = 0; t < 48; ++t) obs[t] = rng.uniform(), target[t] = 1.4 * rng.uniform() - 0.2;

  auto none = build_control(obs, target, {});
  CHECK(none.rho_ctrl == obs);
  CHECK(none.eta == 0.0);
  CHECK(none.qoe == 1.0);

  const std::vector<Interval> full{{0, 48}};
  auto zero = build_control(obs, std::vector<double>(48, 0.0), full);
  CHECK(zero.eta == 1.0);
  CHECK(zero.qoe == 0.0);

  const std::vector<Interval> some{{3, 9}, {20, 30}};
  auto plan = build_control(obs, target, some);
  for (std::size_t t = 0; t < 48; ++t) {
    const bool in = (t >= 3 && t < 9) || (t >= 20 && t < 30);
    if (in)
      CHECK(plan.rho_ctrl[t] == std::clamp(target[t], 0.0, 1.0));
    else
      CHECK(plan.rho_ctrl[t] == obs[t]);
  }
  CHECK(plan.eta <= 1.0);
  CHECK((plan.qoe >= 0.0 && plan.qoe <= 1.0));

  CHECK_THROWS_AS(build_control(obs, target, std::vector<Interval>{{20, 30}, {3, 9}}), InvalidInput);
  CHECK_THROWS_AS(build_control(obs, target, std::vector<Interval>{{3, 9}, {8, 12}}), InvalidInput);
  CHECK_THROWS_AS(build_control(obs, target, std::vector<Interval>{{40, 49}}), InvalidInput);
  auto bad = obs;
  bad[0] = 1.2;
  CHECK_THROWS_AS(build_control(bad, target, {}), InvalidInput);
}

TEST_CASE("volatile fleet: a swept threshold reaches the target trade-off") {
  auto fleet = corpus::synth_volatile_fleet();
  const std::vector<double> multiples{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0};
  auto sweep = sweep_thresholds(fleet, 6, multiples);
  REQUIRE(sweep.size() == multiples.size());
  const SweepPoint* best = best_tradeoff(sweep, 0.80);
  REQUIRE(best != nullptr);
  INFO("multiple " << best->sigma_multiple << " eta " << best->eta << " qoe " << best->qoe);
  CHECK(best->eta >= 0.10);
  CHECK(best->qoe >= 0.80);

  auto sim = simulate_fleet(fleet, {6, 1.0});
  for (const auto& s : sim.sites) {
    std::vector<char> in(s.rho_obs.size(), 0);
    for (const auto& w : s.plan.windows)
      for (std::size_t t = w.start; t < w.end; ++t) in[t] = 1;
    for (std::size_t t = 0; t < in.size(); ++t)
      if (!in[t]) CHECK(s.plan.rho_ctrl[t] == s.rho_obs[t]);
  }
  // A threshold above every rolling sigma leaves the observation untouched.
  auto off = simulate_fleet(fleet, {6, 1e9});
  CHECK(off.eta == 0.0);
  CHECK(off.qoe == 1.0);
}

TEST_CASE("balance_load: hand example and conservation") {
  const std::vector<std::string> ids{"A", "B"};
  auto r = balance_load({{1.2}, {0.5}}, std::vector<double>{1.0, 1.0}, {{1}, {0}}, ids);
  CHECK(r.load[0][0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.load[1][0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(r.unresolved.empty());

  auto same = balance_load({{0.3, 0.9}, {0.5, 0.2}}, std::vector<double>{1.0, 1.0}, {{1}, {0}}, ids);
  CHECK(same.load == std::vector<std::vector<double>>{{0.3, 0.9}, {0.5, 0.2}});

  auto lonely = balance_load({{1.5}, {0.2}}, std::vector<double>{1.0, 1.0}, {{}, {}}, ids);
  REQUIRE(lonely.unresolved.size() == 1);
  CHECK(lonely.unresolved[0].site == 0);
  CHECK(lonely.unresolved[0].excess == doctest::Approx(0.5));
  CHECK_THROWS_AS(balance_load({{1.0}, {1.0}}, std::vector<double>{1.0, 1.0}, {{1}, {}}, ids), InvalidInput);

  nn::Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(7), hours = 1 + rng.below(24);
    std::vector<std::string> names;
    std::vector<double> cap(n);
    std::vector<std::vector<std::size_t>> nb(n);
    std::vector<std::vector<double>> load(n, std::vector<double>(hours));
    for (std::size_t i = 0; i < n; ++i) {
      names.push_back("s" + std::to_string(i));
      cap[i] = 0.5 + rng.uniform();
      for (auto& v : load[i]) v = 1.6 * rng.uniform();
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) nb[i].push_back(j), nb[j].push_back(i);
    auto out = balance_load(load, cap, nb, names);
    for (std::size_t h = 0; h < hours; ++h) {
      double before = 0.0, after = 0.0;
      for (std::size_t i = 0; i < n; ++i) before += load[i][h], after += out.load[i][h];
      CHECK(std::abs(before - after) < 1e-12);
    }
    // Anything still above capacity was reported.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < hours; ++h)
        if (out.load[i][h] > cap[i] * (1 + 1e-12)) {
          bool listed = false;
          for (const auto& o : out.unresolved) listed |= (o.site == i && o.hour == h);
          CHECK(listed);
        }
  }

  // Fully connected with enough aggregate headroom: nothing stays overloaded.
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(5);
    std::vector<std::string> names;
    std::vector<std::vector<std::size_t>> nb(n);
    std::vector<std::vector<double>> load(n, std::vector<double>(1));
    for (std::size_t i = 0; i < n; ++i) {
      names.push_back("s" + std::to_string(i));
      load[i][0] = (i == 0 ? 1.5 : 0.4 * rng.uniform());
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) nb[i].push_back(j);
    }
    auto out = balance_load(load, std::vector<double>(n, 1.0), nb, names);
    CHECK(out.unresolved.empty());
    for (std::size_t i = 0; i < n; ++i) CHECK(out.load[i][0] <= 1.0 + 1e-12);
  }
}

TEST_CASE("normalize_load") {
  auto r = normalize_load(std::vector<double>{0.0, 2.0, 5.0}, 4.0);
  CHECK(r == std::vector<double>{0.0, 0.5, 1.0});
  CHECK_THROWS_AS(normalize_load(std::vector<double>{1.0}, 0.0), InvalidInput);
}
