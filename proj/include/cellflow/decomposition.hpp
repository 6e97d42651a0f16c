#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cellflow::decomp {

inline constexpr std::size_t kHoursPerDay = 24;
inline constexpr std::size_t kDaysPerWeek = 7;
inline constexpr std::size_t kHoursPerWeek = kHoursPerDay * kDaysPerWeek;  // 168
inline constexpr std::size_t kWeeks = 4;
inline constexpr std::size_t kDays = kWeeks * kDaysPerWeek;    // 28
inline constexpr std::size_t kHorizon = kDays * kHoursPerDay;  // 672
inline constexpr std::size_t kDailyTargetLen = 2 * kHoursPerDay;

/// Calendar anchoring of hour 0. first_weekday counts from Monday = 0, so the
/// default puts Saturday/Sunday at days 5 and 6 of every week.
struct SeriesLayout {
  std::size_t first_weekday = 0;

  bool is_weekend(std::size_t day) const { return (first_weekday + day) % kDaysPerWeek >= 5; }
  friend bool operator==(const SeriesLayout&, const SeriesLayout&) = default;
};

/// One site's hourly load over the 672-hour horizon.
struct TrafficSeries {
  std::string site_id;
  std::vector<double> x;
  SeriesLayout layout;

  /// Throws InvalidInput unless the length is 672 and all values are finite and >= 0.
  void validate() const;
};

struct DailyPattern {
  std::vector<double> weekday;  // 24
  std::vector<double> weekend;  // 24
};

struct WeeklyTemplate {
  std::vector<double> w;  // 168
};

/// Hierarchical training targets: d_tar = [weekday | weekend] (48),
/// w_tar (168), u_tar = tile(w_tar) (672) and r_tar = x - u_tar (672).
struct DecompositionTargets {
  std::vector<double> d_tar;
  std::vector<double> w_tar;
  std::vector<double> u_tar;
  std::vector<double> r_tar;
};

WeeklyTemplate weekly_from_daily(const DailyPattern& d, const SeriesLayout& layout = {});

/// p(t) = w(t mod 168); horizon must be a positive multiple of 168.
std::vector<double> periodic_from_weekly(const WeeklyTemplate& w, std::size_t horizon = kHorizon);

DecompositionTargets decompose_targets(const TrafficSeries& series);

/// r = x - p elementwise.
std::vector<double> residual(std::span<const double> x, std::span<const double> p);

/// Peak hour of the daily target: argmax over its 48 entries taken mod 24,
/// lowest index on ties.
std::size_t daily_peak_hour(std::span<const double> d_tar);

}  // namespace cellflow::decomp
