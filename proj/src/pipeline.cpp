#include "cellflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cellflow/error.hpp"
#include "cellflow/nn/rng.hpp"

namespace cellflow::pipeline {

SynthOutputs synth(const corpus::CorpusOptions& opt) {
  const auto c = corpus::synth_corpus(opt);
  SynthOutputs out;
  out.traffic.scale = c.scale;
  out.traffic.offset = c.offset;
  out.traffic.seed = c.seed;
  out.embeddings.dim = opt.embeddings.dim;
  out.embeddings.poi_dim = opt.embeddings.poi_dim;
  for (const auto& s : c.sites) {
    out.traffic.records.push_back({s.series, std::string(corpus::zone_name(s.zone)),
                                   std::string(corpus::split_name(s.split)), s.seed, std::nullopt, std::nullopt});
    out.embeddings.sites.push_back({s.site_id, s.visual, s.pois});
  }
  return out;
}

std::vector<std::string> site_ids(const io::TrafficFile& traffic, const std::string& split) {
  std::vector<std::string> ids;
  for (const auto& r : traffic.records)
    if (split.empty() || r.split == split) ids.push_back(r.series.site_id);
  return ids;
}

std::vector<fusion::LocationInput> select(const io::EmbeddingFile& emb, const std::vector<std::string>& ids) {
  std::map<std::string, const fusion::LocationInput*> by_id;
  for (const auto& s : emb.sites) by_id[s.site_id] = &s;
  std::vector<fusion::LocationInput> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("no embedding record for site '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

fusion::FusionModel train_fusion(const std::vector<fusion::LocationInput>& sites, const fusion::FusionConfig& cfg,
                                 std::size_t epochs, std::uint64_t seed, const Progress& log) {
  if (sites.empty()) throw InvalidInput("no sites to train the fusion model on");
  auto model = fusion::init_fusion(cfg, seed);
  const auto res = fusion::train_fusion(model, sites, epochs, seed);
  if (log && !res.loss_curve.empty())
    log("fusion: loss " + std::to_string(res.loss_curve.front()) + " -> " + std::to_string(res.loss_curve.back()) +
        " over " + std::to_string(epochs) + " epochs");
  return model;
}

std::vector<gen::GeneratorExample> examples(const fusion::FusionModel& fusion, const io::TrafficFile& traffic,
                                            const io::EmbeddingFile& emb, const std::vector<std::string>& ids) {
  std::map<std::string, const io::TrafficRecord*> by_id;
  for (const auto& r : traffic.records) by_id[r.series.site_id] = &r;
  const auto locs = select(emb, ids);
  std::vector<gen::GeneratorExample> out;
  for (const auto& loc : locs) {
    auto it = by_id.find(loc.site_id);
    if (it == by_id.end()) throw InvalidInput("no traffic record for site '" + loc.site_id + "'");
    out.push_back({loc.site_id, fusion::embed_location(fusion, loc).c, it->second->series});
  }
  return out;
}

gen::GeneratorModel train_generator(const fusion::FusionModel& fusion, const io::TrafficFile& traffic,
                                    const io::EmbeddingFile& emb, const GenTrainOptions& opt, const Progress& log) {
  if (!(opt.train_fraction > 0.0 && opt.train_fraction <= 1.0)) throw InvalidInput("train fraction must be in (0, 1]");
  auto ids = site_ids(traffic, "train");
  if (ids.empty()) ids = site_ids(traffic, "");
  if (ids.empty()) throw InvalidInput("no training sites");
  if (opt.train_fraction < 1.0) {
    nn::Rng rng(nn::derive_seed(opt.seed, nn::hash_string("train-fraction")));
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt.train_fraction * ids.size())));
    ids.resize(std::min(keep, ids.size()));
  }
  auto cfg = opt.config;
  cfg.context_dim = fusion.config.dim;
  const auto ex = examples(fusion, traffic, emb, ids);
  auto model = gen::init_generator(cfg, opt.seed);
  gen::train_generator(model, ex, opt.epochs, opt.seed, [&](std::size_t e, const gen::LossBreakdown& l) {
    if (!log) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "generator: epoch %zu/%zu loss %.4f flow %.4f %.4f %.4f peak %.4f", e + 1,
                  opt.epochs, l.total, l.flow[0], l.flow[1], l.flow[2], l.aux.peak);
    log(buf);
  });
  return model;
}

std::uint64_t site_seed(std::uint64_t run_seed, const std::string& id) { return planning::cell_seed(run_seed, id); }

io::TrafficRecord generate_record(const gen::GeneratorModel& model, const std::string& id,
                                  std::span<const double> context, std::uint64_t seed,
                                  const gen::GenerateOptions& opt) {
  auto g = gen::generate(model, context, seed, opt);
  io::TrafficRecord r;
  r.series.site_id = id;
  r.series.x = std::move(g.x);
  r.seed = seed;
  r.parts = decomp::DecompositionTargets{std::move(g.d), std::move(g.w), std::move(g.u), std::move(g.r)};
  r.h_star = g.h_star;
  return r;
}

io::TrafficFile generate_sites(const fusion::FusionModel& fusion, const gen::GeneratorModel& model,
                               const std::vector<fusion::LocationInput>& sites, std::uint64_t run_seed,
                               const gen::GenerateOptions& opt) {
  io::TrafficFile out;
  out.generated = true;
  out.seed = run_seed;
  for (const auto& s : sites)
    out.records.push_back(
        generate_record(model, s.site_id, fusion::embed_location(fusion, s).c, site_seed(run_seed, s.site_id), opt));
  return out;
}

io::ReportFile evaluate(const io::TrafficFile& real, const io::TrafficFile& generated, std::size_t bins) {
  std::map<std::string, const io::TrafficRecord*> by_id;
  for (const auto& r : real.records) by_id[r.series.site_id] = &r;
  std::vector<decomp::TrafficSeries> a, b;
  std::size_t hits = 0, scored = 0;
  for (const auto& g : generated.records) {
    auto it = by_id.find(g.series.site_id);
    if (it == by_id.end()) throw InvalidInput("generated site '" + g.series.site_id + "' has no real counterpart");
    a.push_back(it->second->series);
    b.push_back(g.series);
    if (g.h_star) {
      ++scored;
      const auto t = decomp::decompose_targets(it->second->series);
      hits += (*g.h_star == decomp::daily_peak_hour(t.d_tar));
    }
  }
  io::ReportFile out;
  out.report = metrics::evaluate_corpus(a, b, bins);
  out.peak_sites = scored;
  if (scored) out.peak_accuracy = static_cast<double>(hits) / static_cast<double>(scored);
  return out;
}

planning::TrafficFn traffic_fn(const fusion::FusionModel& fusion, const gen::GeneratorModel& model) {
  return [&fusion, &model](const corpus::GridCell& cell, std::uint64_t seed) {
    const auto ctx = fusion::embed_location(fusion, cell.visual, cell.pois);
    return gen::generate(model, ctx.c, seed).x;
  };
}

planning::RankingResult rank(const fusion::FusionModel& fusion, const gen::GeneratorModel& model,
                             const std::vector<corpus::GridCell>& grid, const std::string& utility, std::size_t k,
                             std::uint64_t seed, std::size_t samples, const planning::FeasibilityRules& rules) {
  const auto cells = planning::filter_feasible(grid, rules);
  return planning::rank_topk(cells, planning::builtin_utility(utility), {k, seed, samples}, traffic_fn(fusion, model));
}

io::OpsFile simulate(const std::vector<corpus::FleetSite>& fleet, const OpsOptions& opt) {
  io::OpsFile out;
  out.simulation = ops::simulate_fleet(fleet, {opt.window, opt.sigma_multiple, opt.threshold});
  if (!opt.sweep.empty()) out.sweep = ops::sweep_thresholds(fleet, opt.window, opt.sweep);
  return out;
}

}  // namespace cellflow::pipeline
