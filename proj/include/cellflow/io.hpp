#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cellflow/corpus.hpp"
#include "cellflow/decomposition.hpp"
#include "cellflow/fusion.hpp"
#include "cellflow/generator.hpp"
#include "cellflow/metrics.hpp"
#include "cellflow/operations.hpp"
#include "cellflow/planning.hpp"
#include "json.hpp"

// Line-delimited JSON files. Every file opens with a header record
// {"format": ..., "version": ..., "records": n, ...} followed by n records.
// Field names and ordering are pinned in docs/formats.md.
namespace cellflow::io {

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// Receives non-fatal ingest notes (e.g. a vector renormalised on read).
using WarningSink = std::function<void(const std::string&)>;

struct TrafficRecord {
  decomp::TrafficSeries series;
  std::string zone;   // empty when absent
  std::string split;  // "train" | "test" | empty
  std::optional<std::uint64_t> seed;
  // Present on generated records only.
  std::optional<decomp::DecompositionTargets> parts;  // d, w, u, r
  std::optional<std::size_t> h_star;
};

struct TrafficFile {
  std::vector<TrafficRecord> records;
  double scale = 1.0;  // raw = value * scale + offset
  double offset = 0.0;
  std::optional<std::uint64_t> seed;
  bool generated = false;
};

struct EmbeddingFile {
  std::vector<fusion::LocationInput> sites;
  std::size_t dim = 0;
  std::size_t poi_dim = 0;
};

struct DecompositionRecord {
  std::string site_id;
  decomp::DecompositionTargets targets;
};

/// Persisted model: the config travels as JSON so one layout serves both kinds.
struct Checkpoint {
  std::string kind;  // "fusion" | "generator"
  int version = kFormatVersion;
  json config;
  std::uint64_t seed = 0;
  std::uint64_t train_seed = 0;
  std::size_t epochs = 0;
  bool trained = false;
  nn::ParameterSet params;
};

struct ReportFile {
  metrics::EvaluationReport report;
  std::optional<double> peak_accuracy;
  std::size_t peak_sites = 0;
};

struct OpsFile {
  ops::FleetSimulation simulation;
  std::vector<ops::SweepPoint> sweep;
};

// Record-level codecs; the service speaks these same objects.
json to_json(const decomp::TrafficSeries& s);
json to_json(const TrafficRecord& r);
json to_json(const fusion::LocationInput& s);
json to_json(const corpus::GridCell& c);
json to_json(const metrics::EvaluationReport& r);
json to_json(const planning::RankingResult& r);
json to_json(const ops::ControlPlan& p);
json to_json(const ops::SiteSimulation& s);
json to_json(const gen::GeneratedTraffic& g);
json to_json(const gen::GeneratorConfig& c);
json to_json(const fusion::FusionConfig& c);
json to_json(const corpus::FleetSite& s);

/// `line` is used only for error messages (0 when unknown).
TrafficRecord traffic_from_json(const json& j, std::size_t line = 0);
fusion::LocationInput location_from_json(const json& j, std::size_t line = 0, const WarningSink& warn = {});
corpus::GridCell grid_cell_from_json(const json& j, std::size_t line = 0, const WarningSink& warn = {});
gen::GeneratorConfig generator_config_from_json(const json& j);
fusion::FusionConfig fusion_config_from_json(const json& j);
corpus::FleetSite fleet_site_from_json(const json& j, std::size_t line = 0);

void write_traffic(std::ostream& os, const TrafficFile& f);
TrafficFile read_traffic(std::istream& is);

void write_embeddings(std::ostream& os, const EmbeddingFile& f);
EmbeddingFile read_embeddings(std::istream& is, const WarningSink& warn = {});

void write_grid(std::ostream& os, const std::vector<corpus::GridCell>& grid);
std::vector<corpus::GridCell> read_grid(std::istream& is, const WarningSink& warn = {});

void write_fleet(std::ostream& os, const std::vector<corpus::FleetSite>& fleet);
std::vector<corpus::FleetSite> read_fleet(std::istream& is);

void write_decomposition(std::ostream& os, const std::vector<DecompositionRecord>& recs);
std::vector<DecompositionRecord> read_decomposition(std::istream& is);

void write_checkpoint(std::ostream& os, const Checkpoint& c);
/// Throws VersionError on a different format version.
Checkpoint read_checkpoint(std::istream& is);

Checkpoint to_checkpoint(const gen::GeneratorModel& m);
Checkpoint to_checkpoint(const fusion::FusionModel& m);
/// Throws FormatError on a kind mismatch or a parameter set that does not
/// match the layout the stored config implies.
gen::GeneratorModel generator_from_checkpoint(const Checkpoint& c);
fusion::FusionModel fusion_from_checkpoint(const Checkpoint& c);

void write_report(std::ostream& os, const ReportFile& r);
ReportFile read_report(std::istream& is);

void write_ranking(std::ostream& os, const planning::RankingResult& r);
planning::RankingResult read_ranking(std::istream& is);

void write_ops(std::ostream& os, const OpsFile& f);

/// File wrappers. A missing or unwritable path throws InvalidInput naming it.
TrafficFile load_traffic(const std::filesystem::path& path);
EmbeddingFile load_embeddings(const std::filesystem::path& path, const WarningSink& warn = {});
std::vector<corpus::GridCell> load_grid(const std::filesystem::path& path, const WarningSink& warn = {});
std::vector<corpus::FleetSite> load_fleet(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
planning::RankingResult load_ranking(const std::filesystem::path& path);
ReportFile load_report(const std::filesystem::path& path);

void save_traffic(const std::filesystem::path& path, const TrafficFile& f);
void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& f);
void save_grid(const std::filesystem::path& path, const std::vector<corpus::GridCell>& grid);
void save_fleet(const std::filesystem::path& path, const std::vector<corpus::FleetSite>& fleet);
void save_decomposition(const std::filesystem::path& path, const std::vector<DecompositionRecord>& recs);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
void save_report(const std::filesystem::path& path, const ReportFile& r);
void save_ranking(const std::filesystem::path& path, const planning::RankingResult& r);
void save_ops(const std::filesystem::path& path, const OpsFile& f);

/// Writes `text` to `path` via a temporary sibling and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cellflow::io
