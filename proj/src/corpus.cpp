#include "cellflow/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cellflow/error.hpp"
#include "cellflow/nn/rng.hpp"

namespace cellflow::corpus {

namespace {

constexpr std::array<std::string_view, kZoneCount> kZoneNames{"office",        "commercial", "residential",
                                                             "entertainment", "industrial", "mixed"};

double circular_bump(double h, double centre, double width) {
  double d = std::fmod(std::abs(h - centre), 24.0);
  d = std::min(d, 24.0 - d);
  return std::exp(-d * d / (2.0 * width * width));
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s == 0.0) throw InvalidInput("cannot normalise a zero vector");
  for (double& x : v) x /= s;
}

std::vector<double> perturbed(const std::vector<double>& sig, nn::Rng& rng, double scale) {
  std::vector<double> v(sig);
  if (scale > 0.0)
    for (double& x : v) x += scale * rng.normal();
  return v;
}

std::vector<double> project(const nn::Tensor& m, const std::vector<double>& v) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i] += m(i, j) * v[j];
  return out;
}

}  // namespace

std::string_view zone_name(Zone z) { return kZoneNames.at(static_cast<std::size_t>(z)); }

Zone parse_zone(std::string_view name) {
  for (std::size_t i = 0; i < kZoneCount; ++i)
    if (kZoneNames[i] == name) return static_cast<Zone>(i);
  throw InvalidInput("unknown zone '" + std::string(name) + "'");
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split '" + std::string(s) + "'");
}

void ZoneSpec::validate() const {
  if (peak_hour < 0 || peak_hour >= 24) throw InvalidInput("zone peak hour must lie in [0,24)");
  if (!(weekday_amp > 0.0) || !(weekend_amp > 0.0)) throw InvalidInput("zone amplitudes must be positive");
  if (!(peak_width > 0.0)) throw InvalidInput("zone peak width must be positive");
  if (base < 0.0 || noise < 0.0 || secondary_amp < 0.0) throw InvalidInput("zone base/noise must be nonnegative");
  if (peak_jitter < 0 || amp_spread < 0.0 || amp_spread >= 1.0) throw InvalidInput("invalid zone site variation");
}

ZoneSpec default_zone_spec(Zone z) {
  ZoneSpec s;
  s.zone = z;
  switch (z) {
    case Zone::office:  // weekday-dominant daytime peak
      s.peak_hour = 10, s.peak_width = 2.0, s.weekday_amp = 1.0, s.weekend_amp = 0.3, s.base = 0.15;
      s.secondary_hour = 16, s.secondary_amp = 0.45;
      break;
    case Zone::commercial:  // noon peak, busier weekends
      s.peak_hour = 13, s.peak_width = 2.2, s.weekday_amp = 0.8, s.weekend_amp = 1.1, s.base = 0.2;
      s.secondary_hour = 19.5, s.secondary_amp = 0.4;
      break;
    case Zone::residential:  // evening peak
      s.peak_hour = 19, s.peak_width = 2.0, s.weekday_amp = 1.0, s.weekend_amp = 1.15, s.base = 0.25;
      s.secondary_hour = 8, s.secondary_amp = 0.35;
      break;
    case Zone::entertainment:  // late, weekend-dominant
      s.peak_hour = 22, s.peak_width = 2.0, s.weekday_amp = 0.5, s.weekend_amp = 1.3, s.base = 0.1;
      break;
    case Zone::industrial:  // early shift
      s.peak_hour = 7, s.peak_width = 2.2, s.weekday_amp = 0.9, s.weekend_amp = 0.5, s.base = 0.3;
      s.secondary_hour = 15, s.secondary_amp = 0.4;
      break;
    case Zone::mixed:
      s.peak_hour = 16, s.peak_width = 2.2, s.weekday_amp = 0.8, s.weekend_amp = 0.8, s.base = 0.3;
      s.secondary_hour = 9, s.secondary_amp = 0.35;
      break;
  }
  return s;
}

SiteProfile site_profile(const ZoneSpec& spec, std::uint64_t seed) {
  spec.validate();
  nn::Rng rng(nn::derive_seed(seed, 0));
  SiteProfile p;
  const auto span = static_cast<std::uint64_t>(2 * spec.peak_jitter + 1);
  const int shift = static_cast<int>(rng.below(span)) - spec.peak_jitter;
  p.peak_hour = ((spec.peak_hour + shift) % 24 + 24) % 24;
  p.amp_factor = 1.0 + spec.amp_spread * (2.0 * rng.uniform() - 1.0);
  return p;
}

std::vector<double> daily_curve(const ZoneSpec& spec, const SiteProfile& site, double amp) {
  const double shift = site.peak_hour - spec.peak_hour;
  std::vector<double> out(decomp::kHoursPerDay);
  for (std::size_t h = 0; h < out.size(); ++h) {
    double shape = circular_bump(h, site.peak_hour, spec.peak_width);
    if (spec.secondary_hour >= 0.0)
      shape += spec.secondary_amp * circular_bump(h, spec.secondary_hour + shift, spec.peak_width);
    out[h] = spec.base + amp * site.amp_factor * shape;
  }
  return out;
}

decomp::TrafficSeries synth_series(const ZoneSpec& spec, std::uint64_t seed, std::string site_id) {
  const SiteProfile site = site_profile(spec, seed);
  const auto weekday = daily_curve(spec, site, spec.weekday_amp);
  const auto weekend = daily_curve(spec, site, spec.weekend_amp);
  nn::Rng rng(nn::derive_seed(seed, 1));

  decomp::TrafficSeries s{std::move(site_id), std::vector<double>(decomp::kHorizon), {}};
  for (std::size_t day = 0; day < decomp::kDays; ++day) {
    const auto& curve = s.layout.is_weekend(day) ? weekend : weekday;
    const double day_mod = spec.noise > 0.0 ? 1.5 * spec.noise * rng.normal() : 0.0;
    for (std::size_t h = 0; h < decomp::kHoursPerDay; ++h) {
      double v = curve[h];
      if (spec.noise > 0.0) {
        v = spec.base + (curve[h] - spec.base) * (1.0 + day_mod);
        v *= 1.0 + spec.noise * rng.normal();
      }
      s.x[day * decomp::kHoursPerDay + h] = std::max(v, 0.0);
    }
  }
  return s;
}

std::vector<double> site_signature(const ZoneSpec& spec, const SiteProfile& site, std::size_t dim) {
  if (dim < kZoneCount + decomp::kHoursPerDay + 2) throw InvalidInput("signature dimension must be at least 32");
  std::vector<double> sig(dim, 0.0);
  sig[static_cast<std::size_t>(spec.zone)] = 1.0;
  sig[kZoneCount + static_cast<std::size_t>(site.peak_hour)] = 1.0;
  const double amp = spec.amp_spread > 0.0 ? (site.amp_factor - 1.0) / spec.amp_spread : 0.0;
  // Amplitude as a unit 2-vector on the first quadrant, same weight as the one-hots.
  const double theta = 0.25 * std::numbers::pi * (amp + 1.0);
  sig[kZoneCount + decomp::kHoursPerDay] = std::cos(theta);
  sig[kZoneCount + decomp::kHoursPerDay + 1] = std::sin(theta);
  return sig;
}

SiteEmbeddings synth_embeddings(const ZoneSpec& spec, std::uint64_t seed, const EmbeddingOptions& opt) {
  const SiteProfile site = site_profile(spec, seed);
  const auto sig = site_signature(spec, site, opt.dim);
  nn::Rng world(opt.world_seed);
  const nn::Tensor to_address = nn::gaussian_sample(world, opt.poi_dim, opt.dim, 1.0 / std::sqrt(opt.dim));
  const nn::Tensor to_context = nn::gaussian_sample(world, opt.poi_dim, opt.dim, 1.0 / std::sqrt(opt.dim));

  nn::Rng rng(nn::derive_seed(seed, 2));
  SiteEmbeddings out;
  out.visual = perturbed(sig, rng, opt.perturbation);
  normalize(out.visual);
  const std::size_t k = rng.below(opt.max_pois + 1);
  out.pois.radius_m = 500.0;
  for (std::size_t i = 0; i < k; ++i) {
    fusion::PoiRecord r{project(to_address, perturbed(sig, rng, opt.poi_perturbation)),
                        project(to_context, perturbed(sig, rng, opt.poi_perturbation))};
    normalize(r.address);
    normalize(r.context);
    out.pois.records.push_back(std::move(r));
  }
  return out;
}

Corpus synth_corpus(const CorpusOptions& opt) {
  if (opt.sites == 0) throw InvalidInput("corpus needs at least one site");
  if (opt.noise_scale < 0.0) throw InvalidInput("noise scale must be nonnegative");
  Corpus c;
  c.seed = opt.seed;
  c.sites.reserve(opt.sites);
  for (std::size_t i = 0; i < opt.sites; ++i) {
    ZoneSpec spec = default_zone_spec(static_cast<Zone>(i % kZoneCount));
    spec.noise *= opt.noise_scale;
    const std::uint64_t seed = nn::derive_seed(opt.seed, i);
    char id[32];
    std::snprintf(id, sizeof id, "site-%04zu", i);
    SyntheticSite s;
    s.site_id = id;
    s.zone = spec.zone;
    s.seed = seed;
    s.series = synth_series(spec, seed, id);
    auto emb = synth_embeddings(spec, seed, opt.embeddings);
    s.visual = std::move(emb.visual);
    s.pois = std::move(emb.pois);
    s.split = i % 5 == 4 ? Split::test : Split::train;
    c.sites.push_back(std::move(s));
  }

  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& s : c.sites)
    for (double v : s.series.x) sum += v, ++n;
  const double mean = sum / static_cast<double>(n);
  for (const auto& s : c.sites)
    for (double v : s.series.x) sum2 += (v - mean) * (v - mean);
  c.scale = std::sqrt(sum2 / static_cast<double>(n));
  if (!(c.scale > 0.0)) c.scale = 1.0;
  for (auto& s : c.sites)
    for (double& v : s.series.x) v /= c.scale;
  return c;
}

std::vector<FleetSite> synth_volatile_fleet(const FleetOptions& opt) {
  if (opt.sites == 0 || opt.burst_hours == 0 || opt.burst_hours > decomp::kHoursPerDay)
    throw InvalidInput("invalid fleet options");
  std::vector<FleetSite> fleet;
  for (std::size_t i = 0; i < opt.sites; ++i) {
    nn::Rng rng(nn::derive_seed(opt.seed, i));
    const double phase = 8.0 + 8.0 * rng.uniform();
    const double level = 0.8 + 0.4 * rng.uniform();
    FleetSite s;
    char id[32];
    std::snprintf(id, sizeof id, "fleet-%02zu", i);
    s.site_id = id;
    s.forecast.resize(decomp::kHorizon);
    for (std::size_t t = 0; t < decomp::kHorizon; ++t) {
      const double h = static_cast<double>(t % decomp::kHoursPerDay);
      s.forecast[t] = level * (0.45 + 0.25 * std::cos(2.0 * std::numbers::pi * (h - phase) / 24.0));
    }
    s.observed = s.forecast;
    const double peak = *std::max_element(s.forecast.begin(), s.forecast.end());
    for (std::size_t week = 0; week < decomp::kWeeks; ++week) {
      for (std::size_t b = 0; b < opt.bursts_per_week; ++b) {
        const std::size_t day = week * decomp::kDaysPerWeek + rng.below(decomp::kDaysPerWeek);
        const std::size_t start = day * decomp::kHoursPerDay + rng.below(decomp::kHoursPerDay - opt.burst_hours + 1);
        for (std::size_t t = start; t < start + opt.burst_hours; ++t)
          s.observed[t] += opt.burst * peak * std::abs(rng.normal());
      }
    }
    fleet.push_back(std::move(s));
  }
  return fleet;
}

std::vector<GridCell> synth_demo_grid(std::uint64_t seed, const EmbeddingOptions& opt) {
  // 4 x 3 lattice at roughly 1 km spacing with the two far corners dropped.
  constexpr double lat0 = 31.2200, lon0 = 121.4600, dlat = 0.009, dlon = 0.0105;
  std::vector<GridCell> grid;
  std::size_t idx = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      if ((r == 0 && c == 3) || (r == 2 && c == 0)) continue;
      const ZoneSpec spec = default_zone_spec(static_cast<Zone>((idx * 5 + 1) % kZoneCount));
      auto emb = synth_embeddings(spec, nn::derive_seed(seed, 1000 + idx), opt);
      char id[16];
      std::snprintf(id, sizeof id, "cell-%02zu", idx);
      GridCell cell;
      cell.cell_id = id;
      cell.latitude = lat0 + dlat * static_cast<double>(r);
      cell.longitude = lon0 + dlon * static_cast<double>(c);
      cell.feasible = idx % 3 != 2;
      cell.visual = std::move(emb.visual);
      cell.pois = std::move(emb.pois);
      grid.push_back(std::move(cell));
      ++idx;
    }
  }
  return grid;
}

}  // namespace cellflow::corpus
