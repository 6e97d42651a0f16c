#include "cellflow/decomposition.hpp"

#include <cmath>

#include "cellflow/error.hpp"

namespace cellflow::decomp {

namespace {

// Pairwise summation: a mean of identical values is reproduced exactly for
// power-of-two counts, which keeps tile(w_tar) == x on periodic input.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 2) return v.empty() ? 0.0 : (v.size() == 1 ? v[0] : v[0] + v[1]);
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double mean_of(const std::vector<double>& v) {
  return pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace

void TrafficSeries::validate() const {
  if (x.size() != kHorizon) {
    throw InvalidInput("series '" + site_id + "' has " + std::to_string(x.size()) +
                       " hours, expected " + std::to_string(kHorizon));
  }
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (!std::isfinite(x[t]) || x[t] < 0.0) {
      throw InvalidInput("series '" + site_id + "' hour " + std::to_string(t) +
                         " is negative or non-finite");
    }
  }
}

WeeklyTemplate weekly_from_daily(const DailyPattern& d, const SeriesLayout& layout) {
  if (d.weekday.size() != kHoursPerDay || d.weekend.size() != kHoursPerDay)
    throw InvalidInput("daily patterns must have 24 entries each");
  WeeklyTemplate out;
  out.w.resize(kHoursPerWeek);
  for (std::size_t t = 0; t < kHoursPerWeek; ++t) {
    const std::size_t day = t / kHoursPerDay;
    out.w[t] = layout.is_weekend(day) ? d.weekend[t % kHoursPerDay] : d.weekday[t % kHoursPerDay];
  }
  return out;
}

std::vector<double> periodic_from_weekly(const WeeklyTemplate& w, std::size_t horizon) {
  if (w.w.size() != kHoursPerWeek) throw InvalidInput("weekly template must have 168 entries");
  if (horizon == 0 || horizon % kHoursPerWeek != 0)
    throw InvalidInput("horizon " + std::to_string(horizon) + " is not a positive multiple of 168");
  std::vector<double> p(horizon);
  for (std::size_t t = 0; t < horizon; ++t) p[t] = w.w[t % kHoursPerWeek];
  return p;
}

DecompositionTargets decompose_targets(const TrafficSeries& series) {
  series.validate();
  const auto& x = series.x;
  DecompositionTargets out;

  out.d_tar.resize(kDailyTargetLen);
  for (std::size_t h = 0; h < kHoursPerDay; ++h) {
    std::vector<double> wk, we;
    for (std::size_t day = 0; day < kDays; ++day)
      (series.layout.is_weekend(day) ? we : wk).push_back(x[day * kHoursPerDay + h]);
    out.d_tar[h] = mean_of(wk);
    out.d_tar[kHoursPerDay + h] = mean_of(we);
  }

  out.w_tar.resize(kHoursPerWeek);
  for (std::size_t s = 0; s < kHoursPerWeek; ++s) {
    std::vector<double> occ;
    for (std::size_t k = 0; k < kWeeks; ++k) occ.push_back(x[k * kHoursPerWeek + s]);
    out.w_tar[s] = mean_of(occ);
  }

  out.u_tar = periodic_from_weekly(WeeklyTemplate{out.w_tar}, kHorizon);
  out.r_tar = residual(x, out.u_tar);
  return out;
}

std::vector<double> residual(std::span<const double> x, std::span<const double> p) {
  if (x.size() != p.size())
    throw InvalidInput("residual: length mismatch (" + std::to_string(x.size()) + " vs " +
                       std::to_string(p.size()) + ")");
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - p[i];
  return r;
}

std::size_t daily_peak_hour(std::span<const double> d_tar) {
  if (d_tar.empty()) throw InvalidInput("daily_peak_hour: empty profile");
  std::size_t best = 0;
  for (std::size_t i = 1; i < d_tar.size(); ++i)
    if (d_tar[i] > d_tar[best]) best = i;
  return best % kHoursPerDay;
}

}  // namespace cellflow::decomp
