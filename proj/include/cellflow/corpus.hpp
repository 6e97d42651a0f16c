#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellflow/decomposition.hpp"
#include "cellflow/fusion.hpp"

namespace cellflow::corpus {

enum class Zone { office, commercial, residential, entertainment, industrial, mixed };
inline constexpr std::size_t kZoneCount = 6;

std::string_view zone_name(Zone z);
/// Throws InvalidInput on an unknown name.
Zone parse_zone(std::string_view name);

/// Shape parameters of one land-use type. Amplitudes are in raw (pre-normalisation) units.
struct ZoneSpec {
  Zone zone = Zone::office;
  int peak_hour = 10;            // centre of the main daily bump
  double peak_width = 2.5;       // hours (Gaussian sigma, circular)
  double weekday_amp = 1.0;
  double weekend_amp = 1.0;
  double base = 0.2;             // floor load
  double secondary_hour = -1.0;  // optional smaller bump; < 0 disables it
  double secondary_amp = 0.0;    // fraction of the main amplitude
  double noise = 0.08;           // residual noise scale; 0 gives an exactly 168-periodic series
  int peak_jitter = 1;           // per-site peak shift drawn from [-jitter, jitter]
  double amp_spread = 0.15;      // per-site amplitude factor drawn from [1 - s, 1 + s]

  /// Throws InvalidInput unless the peak hour is in [0,24) and amplitudes are positive.
  void validate() const;
};

ZoneSpec default_zone_spec(Zone z);

/// Per-site realisation of a zone: the shifted peak hour and amplitude factor.
struct SiteProfile {
  int peak_hour = 0;
  double amp_factor = 1.0;
};
SiteProfile site_profile(const ZoneSpec& spec, std::uint64_t seed);

/// Noise-free daily curve (24 values) at the given amplitude.
std::vector<double> daily_curve(const ZoneSpec& spec, const SiteProfile& site, double amp);

/// Raw 672-hour series: tiled weekday/weekend curves plus seeded residual noise
/// (per-day amplitude modulation and multiplicative hourly jitter), clipped at 0.
decomp::TrafficSeries synth_series(const ZoneSpec& spec, std::uint64_t seed, std::string site_id = "site");

struct EmbeddingOptions {
  std::size_t dim = 32;          // visual d
  std::size_t poi_dim = 64;      // POI D
  double perturbation = 0.05;    // per-component N(0, s^2) added before normalisation
  double poi_perturbation = 0.1;
  std::size_t max_pois = 8;      // K ~ U{0..max_pois}, so K = 0 for 1/(max_pois+1) of sites
  std::uint64_t world_seed = 0x5eed;  // fixes the POI projection matrices
};

/// Noise-free signature: zone one-hot, peak-hour one-hot and the amplitude factor as a unit 2-vector,
/// zero-padded to `dim` (dim must be >= 32).
std::vector<double> site_signature(const ZoneSpec& spec, const SiteProfile& site, std::size_t dim);

struct SiteEmbeddings {
  std::vector<double> visual;
  fusion::PoiSet pois;
};
SiteEmbeddings synth_embeddings(const ZoneSpec& spec, std::uint64_t seed, const EmbeddingOptions& opt = {});

enum class Split { train, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct SyntheticSite {
  std::string site_id;
  Zone zone = Zone::office;
  decomp::TrafficSeries series;  // normalised
  std::vector<double> visual;
  fusion::PoiSet pois;
  std::uint64_t seed = 0;
  Split split = Split::train;
};

struct CorpusOptions {
  std::size_t sites = 200;
  std::uint64_t seed = 42;
  double noise_scale = 1.0;  // multiplies each zone's default noise
  EmbeddingOptions embeddings;
};

/// Traffic is divided by `scale` (the population std of all raw values); no
/// mean is removed so loads stay nonnegative.
struct Corpus {
  std::vector<SyntheticSite> sites;
  double scale = 1.0;
  double offset = 0.0;
  std::uint64_t seed = 0;
};

/// Site i gets zone i mod 6; every fifth site (i mod 5 == 4) is held out for testing.
Corpus synth_corpus(const CorpusOptions& opt = {});

/// Volatile fleet for the operations engine: observed traces are a smooth daily
/// base plus positive bursts in a few blocks; the forecast is the smooth base.
struct FleetSite {
  std::string site_id;
  std::vector<double> observed;
  std::vector<double> forecast;
};
struct FleetOptions {
  std::size_t sites = 6;
  std::uint64_t seed = 7;
  double burst = 0.6;           // mean burst height relative to the base peak
  std::size_t bursts_per_week = 3;
  std::size_t burst_hours = 10;
};
std::vector<FleetSite> synth_volatile_fleet(const FleetOptions& opt = {});

/// Candidate cell as ingested from a grid file.
struct GridCell {
  std::string cell_id;
  double latitude = 0.0;
  double longitude = 0.0;
  bool feasible = true;
  std::optional<std::vector<double>> visual;
  fusion::PoiSet pois;
};

/// Ten cells over a 3 km x 3 km block; cells 2, 5 and 8 are infeasible.
std::vector<GridCell> synth_demo_grid(std::uint64_t seed = 42, const EmbeddingOptions& opt = {});

}  // namespace cellflow::corpus
