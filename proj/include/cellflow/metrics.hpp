#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cellflow/decomposition.hpp"

namespace cellflow::metrics {

/// Histogram over shared bin edges (edges.size() == probs.size() + 1).
struct DiscreteDistribution {
  std::vector<double> edges;
  std::vector<double> probs;
};

/// `bins` equal-width bins over [lo, hi]. A degenerate range is widened by 0.5 on each side.
std::vector<double> uniform_edges(double lo, double hi, std::size_t bins);

/// Values outside the edges are clamped into the outermost bins.
DiscreteDistribution histogram(std::span<const double> values, std::span<const double> edges);

/// Square root of the mixture-form Jensen-Shannon divergence, in nats.
/// Bounded by sqrt(ln 2) for disjoint supports.
double jsd(const DiscreteDistribution& p, const DiscreteDistribution& q);

std::vector<double> first_diff(std::span<const double> x);
double rmse(std::span<const double> y, std::span<const double> y_hat);
double mae(std::span<const double> y, std::span<const double> y_hat);

struct EvaluationReport {
  double jsd = 0.0;
  double jsd_diff = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t sites = 0;
  std::size_t values = 0;       // per corpus
  std::size_t diff_values = 0;  // per corpus
  std::size_t bins = 0;
  double value_lo = 0.0, value_hi = 0.0;
  double diff_lo = 0.0, diff_hi = 0.0;
  std::string pooling = "pooled";
};

inline constexpr std::size_t kDefaultBins = 100;

/// Pools every site's values (and first differences) into one histogram per
/// corpus on edges spanning both corpora. Sites are paired by site_id.
EvaluationReport evaluate_corpus(std::span<const decomp::TrafficSeries> real,
                                 std::span<const decomp::TrafficSeries> generated,
                                 std::size_t bins = kDefaultBins);

}  // namespace cellflow::metrics
