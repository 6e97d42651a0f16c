#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cellflow/io.hpp"

// Orchestration shared by the CLI, the service and the acceptance run, so the
// three produce identical bytes for identical inputs.
namespace cellflow::pipeline {

struct SynthOutputs {
  io::TrafficFile traffic;
  io::EmbeddingFile embeddings;
};
SynthOutputs synth(const corpus::CorpusOptions& opt);

/// Sites whose traffic record carries the given split ("" selects all).
std::vector<std::string> site_ids(const io::TrafficFile& traffic, const std::string& split);

/// Embedding records for the given ids, in that order. Throws InvalidInput on an unknown id.
std::vector<fusion::LocationInput> select(const io::EmbeddingFile& emb, const std::vector<std::string>& ids);

using Progress = std::function<void(const std::string&)>;

fusion::FusionModel train_fusion(const std::vector<fusion::LocationInput>& sites, const fusion::FusionConfig& cfg,
                                 std::size_t epochs, std::uint64_t seed, const Progress& log = {});

struct GenTrainOptions {
  gen::GeneratorConfig config;
  std::size_t epochs = 100;
  std::uint64_t seed = 42;
  double train_fraction = 1.0;  // seeded subset of the training sites, at least one
};

/// Pairs each training site's fused context with its traffic.
std::vector<gen::GeneratorExample> examples(const fusion::FusionModel& fusion, const io::TrafficFile& traffic,
                                            const io::EmbeddingFile& emb, const std::vector<std::string>& ids);

gen::GeneratorModel train_generator(const fusion::FusionModel& fusion, const io::TrafficFile& traffic,
                                    const io::EmbeddingFile& emb, const GenTrainOptions& opt,
                                    const Progress& log = {});

/// Seed a named site is generated with under a run seed.
std::uint64_t site_seed(std::uint64_t run_seed, const std::string& id);

/// One generated record, carrying the decomposition view and h*.
io::TrafficRecord generate_record(const gen::GeneratorModel& model, const std::string& id,
                                  std::span<const double> context, std::uint64_t seed,
                                  const gen::GenerateOptions& opt = {});

io::TrafficFile generate_sites(const fusion::FusionModel& fusion, const gen::GeneratorModel& model,
                               const std::vector<fusion::LocationInput>& sites, std::uint64_t run_seed,
                               const gen::GenerateOptions& opt = {});

/// Pairs sites by id. Peak accuracy compares generated h* with the real daily peak.
io::ReportFile evaluate(const io::TrafficFile& real, const io::TrafficFile& generated,
                        std::size_t bins = metrics::kDefaultBins);

/// Generated 672-hour load of a grid cell under a per-cell seed.
planning::TrafficFn traffic_fn(const fusion::FusionModel& fusion, const gen::GeneratorModel& model);

planning::RankingResult rank(const fusion::FusionModel& fusion, const gen::GeneratorModel& model,
                             const std::vector<corpus::GridCell>& grid, const std::string& utility, std::size_t k,
                             std::uint64_t seed, std::size_t samples = 1,
                             const planning::FeasibilityRules& rules = {});

struct OpsOptions {
  std::size_t window = 6;
  std::optional<double> threshold;  // absolute
  double sigma_multiple = 1.0;
  std::vector<double> sweep;        // sigma multiples; empty skips the sweep
};
io::OpsFile simulate(const std::vector<corpus::FleetSite>& fleet, const OpsOptions& opt);

}  // namespace cellflow::pipeline
