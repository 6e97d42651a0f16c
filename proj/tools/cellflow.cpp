#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "cellflow/error.hpp"
#include "cellflow/pipeline.hpp"
#include "cellflow/service.hpp"

using namespace cellflow;
using io::json;

namespace {

constexpr const char* kToolVersion = "cellflow 1.0.0";

enum Exit { kOk = 0, kUsage = 2, kData = 3, kVersionMismatch = 4, kInternal = 5 };

void log(const std::string& msg) { std::cerr << msg << '\n'; }
const pipeline::Progress progress = log;

/// Every long option of the subcommand with its effective value.
json parameters(const CLI::App& sub) {
  json p = json::object();
  for (const auto* o : sub.get_options()) {
    if (o->get_lnames().empty() || o->get_lnames()[0] == "help") continue;
    const auto& name = o->get_lnames()[0];
    if (o->get_expected_max() == 0) {
      p[name] = o->count() > 0;
      continue;
    }
    const auto res = o->count() ? o->results() : std::vector<std::string>{};
    if (res.empty())
      p[name] = o->get_default_str().empty() ? json(nullptr) : json(o->get_default_str());
    else if (res.size() == 1)
      p[name] = res[0];
    else
      p[name] = res;
  }
  return p;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json seeds = json::object();
  std::vector<std::string> inputs, outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const CLI::App& sub, const std::string& primary) const {
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m{{"command", command},         {"argv", argv},         {"tool_version", kToolVersion}, {"format_version", io::kFormatVersion},
           {"parameters", parameters(sub)}, {"seeds", seeds},        {"inputs", inputs},
           {"outputs", outputs},         {"wall_clock_s", sec},      {"finished_at", std::time(nullptr)}};
    io::write_text_file(primary + ".manifest.json", m.dump(2) + "\n");
  }
};

io::WarningSink warn_to_log() {
  return [](const std::string& w) { log("warning: " + w); };
}

std::vector<fusion::LocationInput> grid_locations(const std::vector<corpus::GridCell>& grid) {
  std::vector<fusion::LocationInput> out;
  for (const auto& c : grid) out.push_back({c.cell_id, c.visual, c.pois});
  return out;
}

std::atomic<service::Service*> g_service{nullptr};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Site-conditioned traffic generation, site ranking and energy-saving simulation"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI file whose keys mirror the flags; flags take precedence");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Manifest man;
  std::function<void()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesise a zone-typed corpus with paired embeddings");
  corpus::CorpusOptions corpus_opt;
  std::string traffic_out, emb_out, grid_out, fleet_out;
  synth->add_option("--sites", corpus_opt.sites, "Number of sites")->check(CLI::PositiveNumber);
  synth->add_option("--seed", corpus_opt.seed, "Master seed");
  synth->add_option("--noise-scale", corpus_opt.noise_scale, "Multiplier on each zone's residual noise")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--traffic", traffic_out, "Output traffic file")->required();
  synth->add_option("--embeddings", emb_out, "Output embedding file")->required();
  synth->add_option("--grid", grid_out, "Also write the 10-cell demo grid here");
  synth->add_option("--fleet", fleet_out, "Also write the volatile operations fleet here");
  synth->callback([&] {
    action = [&] {
      const auto out = pipeline::synth(corpus_opt);
      io::save_traffic(traffic_out, out.traffic);
      io::save_embeddings(emb_out, out.embeddings);
      man.outputs = {traffic_out, emb_out};
      if (!grid_out.empty()) io::save_grid(grid_out, corpus::synth_demo_grid(corpus_opt.seed, corpus_opt.embeddings)),
            man.outputs.push_back(grid_out);
      if (!fleet_out.empty()) io::save_fleet(fleet_out, corpus::synth_volatile_fleet()), man.outputs.push_back(fleet_out);
      man.seeds["corpus"] = corpus_opt.seed;
      log("synth: wrote " + std::to_string(out.traffic.records.size()) + " sites");
      man.write(*synth, traffic_out);
    };
  });

  // train-fusion
  auto* tf = app.add_subcommand("train-fusion", "Train the masked-reconstruction fusion model");
  std::string tf_emb, tf_traffic, tf_out;
  std::size_t tf_epochs = 50;
  std::uint64_t tf_seed = 42;
  fusion::FusionConfig fcfg;
  tf->add_option("--embeddings", tf_emb, "Embedding file")->required()->check(CLI::ExistingFile);
  tf->add_option("--traffic", tf_traffic, "Traffic file; when given only its train split is used")
      ->check(CLI::ExistingFile);
  tf->add_option("--epochs", tf_epochs, "Training epochs");
  tf->add_option("--seed", tf_seed, "Initialisation and training seed");
  tf->add_option("--batch", fcfg.batch, "Minibatch size")->check(CLI::PositiveNumber);
  tf->add_option("--lr", fcfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tf->add_option("--output", tf_out, "Output checkpoint")->required();
  tf->callback([&] {
    action = [&] {
      const auto emb = io::load_embeddings(tf_emb, warn_to_log());
      std::vector<std::string> ids;
      if (!tf_traffic.empty()) ids = pipeline::site_ids(io::load_traffic(tf_traffic), "train");
      else
        for (const auto& s : emb.sites) ids.push_back(s.site_id);
      fcfg.dim = emb.dim;
      fcfg.poi_dim = emb.poi_dim;
      const auto model = pipeline::train_fusion(pipeline::select(emb, ids), fcfg, tf_epochs, tf_seed, progress);
      io::save_checkpoint(tf_out, io::to_checkpoint(model));
      man.inputs = {tf_emb};
      if (!tf_traffic.empty()) man.inputs.push_back(tf_traffic);
      man.outputs = {tf_out};
      man.seeds["train"] = tf_seed;
      man.write(*tf, tf_out);
    };
  });

  // train-gen
  auto* tg = app.add_subcommand("train-gen", "Train the three-level flow-matching generator");
  std::string tg_traffic, tg_emb, tg_fusion, tg_out;
  pipeline::GenTrainOptions gopt;
  bool no_peak = false;
  tg->add_option("--traffic", tg_traffic, "Traffic file")->required()->check(CLI::ExistingFile);
  tg->add_option("--embeddings", tg_emb, "Embedding file")->required()->check(CLI::ExistingFile);
  tg->add_option("--fusion", tg_fusion, "Fusion checkpoint")->required()->check(CLI::ExistingFile);
  tg->add_option("--epochs", gopt.epochs, "Training epochs");
  tg->add_option("--seed", gopt.seed, "Initialisation and training seed");
  tg->add_option("--train-fraction", gopt.train_fraction, "Fraction of training sites used")
      ->check(CLI::Range(1e-9, 1.0));
  tg->add_flag("--disable-peak-head", no_peak, "Ablate the peak-hour head");
  tg->add_option("--batch", gopt.config.batch, "Minibatch size")->check(CLI::PositiveNumber);
  tg->add_option("--lr", gopt.config.lr, "Initial Adam learning rate")->check(CLI::PositiveNumber);
  tg->add_option("--lr-final", gopt.config.lr_final, "Learning rate at the last epoch")->check(CLI::PositiveNumber);
  tg->add_option("--hidden", gopt.config.hidden, "Velocity net width")->check(CLI::PositiveNumber);
  tg->add_option("--output", tg_out, "Output checkpoint")->required();
  tg->callback([&] {
    action = [&] {
      gopt.config.peak_head = !no_peak;
      const auto traffic = io::load_traffic(tg_traffic);
      const auto emb = io::load_embeddings(tg_emb, warn_to_log());
      const auto fm = io::fusion_from_checkpoint(io::load_checkpoint(tg_fusion));
      const auto model = pipeline::train_generator(fm, traffic, emb, gopt, progress);
      io::save_checkpoint(tg_out, io::to_checkpoint(model));
      man.inputs = {tg_traffic, tg_emb, tg_fusion};
      man.outputs = {tg_out};
      man.seeds["train"] = gopt.seed;
      man.write(*tg, tg_out);
    };
  });

  // decompose
  auto* dc = app.add_subcommand("decompose", "Write daily, weekly, periodic and residual targets");
  std::string dc_in, dc_out;
  dc->add_option("--traffic", dc_in, "Traffic file")->required()->check(CLI::ExistingFile);
  dc->add_option("--output", dc_out, "Output decomposition file")->required();
  dc->callback([&] {
    action = [&] {
      std::vector<io::DecompositionRecord> recs;
      for (const auto& r : io::load_traffic(dc_in).records)
        recs.push_back({r.series.site_id, decomp::decompose_targets(r.series)});
      io::save_decomposition(dc_out, recs);
      man.inputs = {dc_in};
      man.outputs = {dc_out};
      man.write(*dc, dc_out);
    };
  });

  // generate
  auto* ge = app.add_subcommand("generate", "Generate 672-hour traffic for sites or grid cells");
  std::string ge_fusion, ge_gen, ge_emb, ge_traffic, ge_grid, ge_split = "test", ge_out;
  std::uint64_t ge_seed = 42;
  ge->add_option("--fusion", ge_fusion, "Fusion checkpoint")->required()->check(CLI::ExistingFile);
  ge->add_option("--generator", ge_gen, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  auto* ge_emb_opt = ge->add_option("--embeddings", ge_emb, "Embedding file of the sites")->check(CLI::ExistingFile);
  ge->add_option("--traffic", ge_traffic, "Traffic file selecting sites by split")->check(CLI::ExistingFile);
  ge->add_option("--split", ge_split, "Split to generate when --traffic is given (train, test or all)")
      ->check(CLI::IsMember({"train", "test", "all"}));
  auto* ge_grid_opt = ge->add_option("--grid", ge_grid, "Grid file; generates every cell")->check(CLI::ExistingFile);
  ge_emb_opt->excludes(ge_grid_opt);
  ge->add_option("--seed", ge_seed, "Run seed; each site uses a seed derived from it and the site id");
  ge->add_option("--output", ge_out, "Output generated-traffic file")->required();
  ge->callback([&] {
    if (ge_emb.empty() && ge_grid.empty()) throw CLI::RequiredError("--embeddings or --grid");
    action = [&] {
      const auto fm = io::fusion_from_checkpoint(io::load_checkpoint(ge_fusion));
      const auto gm = io::generator_from_checkpoint(io::load_checkpoint(ge_gen));
      std::vector<fusion::LocationInput> sites;
      if (!ge_grid.empty()) {
        sites = grid_locations(io::load_grid(ge_grid, warn_to_log()));
        man.inputs.push_back(ge_grid);
      } else {
        const auto emb = io::load_embeddings(ge_emb, warn_to_log());
        man.inputs.push_back(ge_emb);
        if (!ge_traffic.empty()) {
          sites = pipeline::select(emb, pipeline::site_ids(io::load_traffic(ge_traffic), ge_split == "all" ? "" : ge_split));
          man.inputs.push_back(ge_traffic);
        } else {
          sites = emb.sites;
        }
      }
      const auto out = pipeline::generate_sites(fm, gm, sites, ge_seed);
      io::save_traffic(ge_out, out);
      man.inputs.insert(man.inputs.begin(), {ge_fusion, ge_gen});
      man.outputs = {ge_out};
      man.seeds["run"] = ge_seed;
      log("generate: " + std::to_string(out.records.size()) + " sites");
      man.write(*ge, ge_out);
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare generated traffic with real traffic");
  std::string ev_real, ev_gen, ev_out;
  std::size_t ev_bins = metrics::kDefaultBins;
  ev->add_option("--real", ev_real, "Real traffic file")->required()->check(CLI::ExistingFile);
  ev->add_option("--generated", ev_gen, "Generated traffic file")->required()->check(CLI::ExistingFile);
  ev->add_option("--bins", ev_bins, "Histogram bins")->check(CLI::PositiveNumber);
  ev->add_option("--output", ev_out, "Output report")->required();
  ev->callback([&] {
    action = [&] {
      const auto rep = pipeline::evaluate(io::load_traffic(ev_real), io::load_traffic(ev_gen), ev_bins);
      io::save_report(ev_out, rep);
      char buf[200];
      std::snprintf(buf, sizeof buf, "evaluate: jsd %.4f jsd_diff %.4f rmse %.4f mae %.4f over %zu sites",
                    rep.report.jsd, rep.report.jsd_diff, rep.report.rmse, rep.report.mae, rep.report.sites);
      log(buf);
      if (rep.peak_accuracy) log("evaluate: peak-hour accuracy " + std::to_string(*rep.peak_accuracy));
      man.inputs = {ev_real, ev_gen};
      man.outputs = {ev_out};
      man.write(*ev, ev_out);
    };
  });

  // rank
  auto* rk = app.add_subcommand("rank", "Rank feasible grid cells by a utility of their generated traffic");
  std::string rk_fusion, rk_gen, rk_grid, rk_utility = "lsi", rk_out;
  std::size_t rk_k = 3, rk_samples = 1;
  std::uint64_t rk_seed = 42;
  planning::FeasibilityRules rules;
  rk->add_option("--fusion", rk_fusion, "Fusion checkpoint")->required()->check(CLI::ExistingFile);
  rk->add_option("--generator", rk_gen, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  rk->add_option("--grid", rk_grid, "Grid file")->required()->check(CLI::ExistingFile);
  rk->add_option("--k", rk_k, "Number of cells to return")->check(CLI::PositiveNumber);
  rk->add_option("--utility", rk_utility, "Utility")->check(CLI::IsMember(planning::builtin_utility_names()));
  rk->add_option("--samples", rk_samples, "Generated samples averaged per cell")->check(CLI::PositiveNumber);
  rk->add_option("--min-distance-m", rules.min_distance_m, "Minimum distance to deployed sites")
      ->check(CLI::NonNegativeNumber);
  rk->add_option("--seed", rk_seed, "Run seed");
  rk->add_option("--output", rk_out, "Output ranking file")->required();
  rk->callback([&] {
    action = [&] {
      const auto fm = io::fusion_from_checkpoint(io::load_checkpoint(rk_fusion));
      const auto gm = io::generator_from_checkpoint(io::load_checkpoint(rk_gen));
      const auto res = pipeline::rank(fm, gm, io::load_grid(rk_grid, warn_to_log()), rk_utility, rk_k, rk_seed,
                                      rk_samples, rules);
      if (res.truncated)
        log("rank: only " + std::to_string(res.candidates) + " feasible cells, fewer than K = " + std::to_string(rk_k));
      io::save_ranking(rk_out, res);
      man.inputs = {rk_fusion, rk_gen, rk_grid};
      man.outputs = {rk_out};
      man.seeds["run"] = rk_seed;
      man.write(*rk, rk_out);
    };
  });

  // ops-sim
  auto* os = app.add_subcommand("ops-sim", "Simulate volatility-triggered control over a fleet");
  std::string os_fleet, os_out;
  pipeline::OpsOptions oopt;
  double os_threshold = -1.0;
  os->add_option("--fleet", os_fleet, "Fleet file")->required()->check(CLI::ExistingFile);
  os->add_option("--window", oopt.window, "Volatility window in hours")->check(CLI::Range(2, 672));
  auto* thr = os->add_option("--threshold", os_threshold, "Absolute sigma threshold on the normalised load")
                  ->check(CLI::NonNegativeNumber);
  os->add_option("--sigma-multiple", oopt.sigma_multiple, "Threshold as a multiple of each site's sigma")
      ->check(CLI::NonNegativeNumber)
      ->excludes(thr);
  os->add_option("--sweep", oopt.sweep, "Sigma multiples to sweep")->check(CLI::NonNegativeNumber);
  os->add_option("--output", os_out, "Output simulation file")->required();
  os->callback([&] {
    action = [&] {
      if (thr->count()) oopt.threshold = os_threshold;
      const auto res = pipeline::simulate(io::load_fleet(os_fleet), oopt);
      io::save_ops(os_out, res);
      char buf[160];
      std::snprintf(buf, sizeof buf, "ops-sim: eta %.4f qoe %.4f", res.simulation.eta, res.simulation.qoe);
      log(buf);
      if (const auto* best = ops::best_tradeoff(res.sweep, 0.80)) {
        std::snprintf(buf, sizeof buf, "ops-sim: best sweep point with QoE >= 0.80: multiple %.3g eta %.4f qoe %.4f",
                      best->sigma_multiple, best->eta, best->qoe);
        log(buf);
      }
      man.inputs = {os_fleet};
      man.outputs = {os_out};
      man.write(*os, os_out);
    };
  });

  // serve
  auto* sv = app.add_subcommand("serve", "Serve generation, ranking and simulation over HTTP");
  service::ServiceConfig scfg;
  sv->add_option("--host", scfg.host, "Bind address");
  sv->add_option("--port", scfg.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  sv->add_option("--fusion", scfg.fusion_path, "Fusion checkpoint");
  sv->add_option("--generator", scfg.generator_path, "Generator checkpoint");
  sv->add_option("--grid", scfg.grid_path, "Grid file");
  sv->add_option("--fleet", scfg.fleet_path, "Fleet file");
  sv->add_option("--embeddings", scfg.embeddings_path, "Embedding file for corpus site lookups");
  sv->add_option("--seed", scfg.seed, "Default run seed");
  sv->add_option("--workers", scfg.workers, "Request worker threads")->check(CLI::PositiveNumber);
  sv->callback([&] {
    action = [&] {
      // Environment overrides the defaults; explicit flags override the environment.
      service::ServiceConfig cfg;
      service::apply_env(cfg);
      for (const auto* o : sv->get_options()) {
        if (!o->count() || o->get_lnames().empty()) continue;
        const auto& n = o->get_lnames()[0];
        if (n == "host") cfg.host = scfg.host;
        else if (n == "port") cfg.port = scfg.port;
        else if (n == "fusion") cfg.fusion_path = scfg.fusion_path;
        else if (n == "generator") cfg.generator_path = scfg.generator_path;
        else if (n == "grid") cfg.grid_path = scfg.grid_path;
        else if (n == "fleet") cfg.fleet_path = scfg.fleet_path;
        else if (n == "embeddings") cfg.embeddings_path = scfg.embeddings_path;
        else if (n == "seed") cfg.seed = scfg.seed;
        else if (n == "workers") cfg.workers = scfg.workers;
      }
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);

      service::Service svc(cfg);
      const int port = svc.bind();
      log("serve: listening on " + cfg.host + ":" + std::to_string(port));
      std::thread loader([&] {
        try {
          svc.load();
          log("serve: checkpoints loaded, ready");
        } catch (const std::exception& e) {
          log(std::string("serve: load failed, staying degraded: ") + e.what());
        }
      });
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        log("serve: signal " + std::to_string(sig) + ", shutting down");
        svc.stop();
      });
      svc.run();
      loader.join();
      // Wake the waiter if the server stopped for another reason.
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  man.command = app.get_subcommands().front()->get_name();
  for (int i = 0; i < argc; ++i) man.argv.emplace_back(argv[i]);
  try {
    action();
  } catch (const VersionError& e) {
    log(std::string("error: incompatible checkpoint or file version: ") + e.what());
    return kVersionMismatch;
  } catch (const FormatError& e) {
    log(std::string("error: invalid data: ") + e.what());
    return kData;
  } catch (const InvalidInput& e) {
    log(std::string("error: invalid input: ") + e.what());
    return kData;
  } catch (const StateError& e) {
    log(std::string("error: ") + e.what());
    return kData;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return kInternal;
  }
  return kOk;
}
