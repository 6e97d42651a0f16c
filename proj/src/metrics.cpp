#include "cellflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cellflow/error.hpp"

namespace cellflow::metrics {

std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
  if (bins == 0) throw InvalidInput("histogram needs at least one bin");
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) throw InvalidInput("invalid histogram range");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  edges.back() = hi;
  return edges;
}

DiscreteDistribution histogram(std::span<const double> values, std::span<const double> edges) {
  if (values.empty()) throw InvalidInput("histogram of an empty sample");
  if (edges.size() < 2) throw InvalidInput("histogram needs at least two edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i])) throw InvalidInput("histogram edges must be finite");
    if (i > 0 && !(edges[i] > edges[i - 1])) throw InvalidInput("histogram edges must increase strictly");
  }
  const std::size_t bins = edges.size() - 1;
  std::vector<double> counts(bins, 0.0);
  for (double v : values) {
    // upper_bound over interior edges: bin i holds [e_i, e_{i+1}), the last bin is closed.
    auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, v);
    counts[static_cast<std::size_t>(it - (edges.begin() + 1))] += 1.0;
  }
  DiscreteDistribution d;
  d.edges.assign(edges.begin(), edges.end());
  d.probs.resize(bins);
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < bins; ++i) d.probs[i] = counts[i] / n;
  return d;
}

double jsd(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.edges != q.edges || p.probs.size() != q.probs.size())
    throw InvalidInput("jsd: distributions use different bin edges");
  double js = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    const double a = p.probs[i];
    const double b = q.probs[i];
    const double m = 0.5 * (a + b);
    const double ta = a > 0.0 ? a * std::log(a / m) : 0.0;
    const double tb = b > 0.0 ? b * std::log(b / m) : 0.0;
    js += 0.5 * (ta + tb);  // commutative per bin, so jsd(p, q) == jsd(q, p) bitwise
  }
  return std::sqrt(std::max(js, 0.0));
}

std::vector<double> first_diff(std::span<const double> x) {
  if (x.size() < 2) throw InvalidInput("first_diff needs at least two values");
  std::vector<double> d(x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d[i] = x[i + 1] - x[i];
  return d;
}

namespace {
void check_pair(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size())
    throw InvalidInput("length mismatch: " + std::to_string(y.size()) + " vs " + std::to_string(y_hat.size()));
  if (y.empty()) throw InvalidInput("error metrics need at least one value");
}
}  // namespace

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

EvaluationReport evaluate_corpus(std::span<const decomp::TrafficSeries> real,
                                 std::span<const decomp::TrafficSeries> generated, std::size_t bins) {
  if (real.empty()) throw InvalidInput("evaluate: empty real corpus");
  std::map<std::string, const decomp::TrafficSeries*> gen_by_id;
  for (const auto& g : generated) {
    if (!gen_by_id.emplace(g.site_id, &g).second)
      throw InvalidInput("evaluate: duplicate generated site '" + g.site_id + "'");
  }
  if (gen_by_id.size() != real.size())
    throw InvalidInput("evaluate: corpora have different site counts");

  std::vector<double> rv, gv, rd, gd;
  for (const auto& r : real) {
    auto it = gen_by_id.find(r.site_id);
    if (it == gen_by_id.end()) throw InvalidInput("evaluate: site '" + r.site_id + "' has no generated pair");
    const auto& g = *it->second;
    if (g.x.size() != r.x.size()) throw InvalidInput("evaluate: site '" + r.site_id + "' length mismatch");
    rv.insert(rv.end(), r.x.begin(), r.x.end());
    gv.insert(gv.end(), g.x.begin(), g.x.end());
    auto a = first_diff(r.x);
    auto b = first_diff(g.x);
    rd.insert(rd.end(), a.begin(), a.end());
    gd.insert(gd.end(), b.begin(), b.end());
  }

  auto range = [](const std::vector<double>& a, const std::vector<double>& b) {
    auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    return std::pair{std::min(*amin, *bmin), std::max(*amax, *bmax)};
  };

  EvaluationReport rep;
  rep.sites = real.size();
  rep.values = rv.size();
  rep.diff_values = rd.size();
  rep.bins = bins;
  std::tie(rep.value_lo, rep.value_hi) = range(rv, gv);
  std::tie(rep.diff_lo, rep.diff_hi) = range(rd, gd);
  const auto ve = uniform_edges(rep.value_lo, rep.value_hi, bins);
  const auto de = uniform_edges(rep.diff_lo, rep.diff_hi, bins);
  rep.jsd = jsd(histogram(rv, ve), histogram(gv, ve));
  rep.jsd_diff = jsd(histogram(rd, de), histogram(gd, de));
  rep.rmse = rmse(rv, gv);
  rep.mae = mae(rv, gv);
  return rep;
}

}  // namespace cellflow::metrics
