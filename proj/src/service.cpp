#include "cellflow/service.hpp"

#include <cstdlib>
#include <sstream>

#include "cellflow/error.hpp"
#include "cellflow/pipeline.hpp"
#include "httplib.h"

namespace cellflow::service {

using io::json;

namespace {

// Rejected request field; carries the field name for the response body.
struct FieldError : InvalidInput {
  std::string field;
  FieldError(std::string f, const std::string& what) : InvalidInput(what), field(std::move(f)) {}
};

struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& msg, const std::vector<std::string>& fields = {}) {
  json body{{"error", msg}};
  if (!fields.empty()) body["fields"] = fields;
  reply(res, status, body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j;
  try {
    j = json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed JSON body: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("request body must be a JSON object");
  return j;
}

std::optional<std::uint64_t> opt_uint(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_unsigned()) throw FieldError(key, std::string("'") + key + "' must be a nonnegative integer");
  return it->get<std::uint64_t>();
}

std::optional<double> opt_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw FieldError(key, std::string("'") + key + "' must be a number");
  return it->get<double>();
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw FieldError(key, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

std::string env(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

template <class T>
T env_number(const char* name, T fallback) {
  const auto v = env(name);
  if (v.empty()) return fallback;
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<T>(n);
  } catch (const std::exception&) {
    throw InvalidInput(std::string(name) + " must be a nonnegative integer, got '" + v + "'");
  }
}

struct RankParams {
  std::uint64_t k, seed, samples;
  std::string utility;
};

RankParams rank_params(const json& p, std::uint64_t default_seed) {
  RankParams r{opt_uint(p, "k").value_or(3), opt_uint(p, "seed").value_or(default_seed),
               opt_uint(p, "samples").value_or(1), opt_string(p, "utility").value_or("lsi")};
  if (r.k == 0) throw FieldError("k", "'k' must be >= 1");
  if (r.samples == 0) throw FieldError("samples", "'samples' must be >= 1");
  try {
    (void)planning::builtin_utility(r.utility);
  } catch (const InvalidInput& e) {
    throw FieldError("utility", e.what());
  }
  return r;
}

planning::RankingResult run_rank(const Snapshot& s, const json& p, std::uint64_t default_seed) {
  const auto r = rank_params(p, default_seed);
  if (s.grid.empty()) throw InvalidInput("no grid loaded");
  return pipeline::rank(s.fusion, s.generator, s.grid, r.utility, r.k, r.seed, r.samples);
}

}  // namespace

std::string ranking_body(const planning::RankingResult& r) {
  std::ostringstream os;
  io::write_ranking(os, r);
  return os.str();
}

std::string generation_body(const io::TrafficRecord& r) { return io::to_json(r).dump() + "\n"; }

void apply_env(ServiceConfig& cfg) {
  if (auto v = env("CELLFLOW_HOST"); !v.empty()) cfg.host = v;
  cfg.port = env_number<int>("CELLFLOW_PORT", cfg.port);
  if (auto v = env("CELLFLOW_FUSION"); !v.empty()) cfg.fusion_path = v;
  if (auto v = env("CELLFLOW_GENERATOR"); !v.empty()) cfg.generator_path = v;
  if (auto v = env("CELLFLOW_GRID"); !v.empty()) cfg.grid_path = v;
  if (auto v = env("CELLFLOW_FLEET"); !v.empty()) cfg.fleet_path = v;
  if (auto v = env("CELLFLOW_EMBEDDINGS"); !v.empty()) cfg.embeddings_path = v;
  cfg.seed = env_number<std::uint64_t>("CELLFLOW_SEED", cfg.seed);
  cfg.workers = env_number<std::size_t>("CELLFLOW_WORKERS", cfg.workers);
  if (cfg.port < 0 || cfg.port > 65535) throw InvalidInput("port must be in [0, 65535]");
  if (cfg.workers == 0) throw InvalidInput("worker count must be >= 1");
}

std::shared_ptr<const Snapshot> load_snapshot(const ServiceConfig& cfg) {
  if (cfg.fusion_path.empty() || cfg.generator_path.empty())
    throw InvalidInput("both the fusion and generator checkpoint paths are required");
  auto s = std::make_shared<Snapshot>();
  s->fusion = io::fusion_from_checkpoint(io::load_checkpoint(cfg.fusion_path));
  s->generator = io::generator_from_checkpoint(io::load_checkpoint(cfg.generator_path));
  if (s->generator.config.context_dim != s->fusion.config.dim)
    throw InvalidInput("generator context width does not match the fusion embedding width");
  if (!cfg.grid_path.empty()) s->grid = io::load_grid(cfg.grid_path);
  if (!cfg.fleet_path.empty()) s->fleet = io::load_fleet(cfg.fleet_path);
  if (!cfg.embeddings_path.empty()) s->sites = io::load_embeddings(cfg.embeddings_path).sites;
  s->fusion_path = cfg.fusion_path;
  s->generator_path = cfg.generator_path;
  return s;
}

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), http_(std::make_unique<httplib::Server>()) {
  const auto workers = cfg_.workers;
  http_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  routes();
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(jobs_mu_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Service::load() { install(load_snapshot(cfg_)); }

void Service::install(std::shared_ptr<const Snapshot> snap) {
  std::lock_guard lock(snap_mu_);
  snap_ = std::move(snap);
}

std::shared_ptr<const Snapshot> Service::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snap_;
}

int Service::bind() {
  if (cfg_.port == 0) return http_->bind_to_any_port(cfg_.host);
  if (!http_->bind_to_port(cfg_.host, cfg_.port))
    throw InvalidInput("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  return cfg_.port;
}

void Service::run() {
  run_entered_ = true;
  if (!stop_requested_) http_->listen_after_bind();
  run_returned_ = true;
}

void Service::stop() {
  stop_requested_ = true;
  if (!http_ || !run_entered_) return;
  // A run() that has not reached its accept loop yet would miss a plain stop.
  while (!http_->is_running() && !run_returned_) std::this_thread::yield();
  http_->stop();
}

std::string Service::enqueue(const std::string& kind, json params) {
  std::lock_guard lock(jobs_mu_);
  const std::string id = "job-" + std::to_string(next_job_++);
  jobs_[id] = {id, kind, std::move(params), "queued", nullptr, ""};
  queue_.push_back(id);
  jobs_cv_.notify_one();
  return id;
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    json params;
    {
      std::unique_lock lock(jobs_mu_);
      jobs_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      jobs_[id].status = "running";
      params = jobs_[id].params;
    }
    json result;
    std::string error;
    try {
      auto snap = snapshot();
      if (!snap) throw StateError("model not loaded");
      result = io::to_json(run_rank(*snap, params, cfg_.seed));
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard lock(jobs_mu_);
    auto& job = jobs_[id];
    job.status = error.empty() ? "done" : "failed";
    job.result = std::move(result);
    job.error = std::move(error);
  }
}

void Service::routes() {
  auto& s = *http_;

  // Wraps a handler with the shared error mapping and the loaded-model check.
  auto guarded = [this](auto body) {
    return [this, body](const httplib::Request& req, httplib::Response& res) {
      auto snap = snapshot();
      if (!snap) return fail(res, 503, "model not loaded");
      try {
        body(*snap, req, res);
      } catch (const FieldError& e) {
        fail(res, 400, e.what(), {e.field});
      } catch (const NotFound& e) {
        fail(res, 404, e.what());
      } catch (const InvalidInput& e) {
        fail(res, 400, e.what());
      } catch (const StateError& e) {
        fail(res, 503, e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    };
  };

  s.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    if (ready())
      reply(res, 200, {{"status", "ready"}});
    else
      reply(res, 503, {{"status", "degraded"}, {"reason", "checkpoints not loaded"}});
  });

  s.Get("/model/info", guarded([this](const Snapshot& snap, const httplib::Request&, httplib::Response& res) {
          auto part = [](const std::string& path, const json& cfg, std::uint64_t seed, std::size_t epochs, bool trained) {
            return json{{"path", path}, {"config", cfg}, {"seed", seed}, {"epochs", epochs}, {"trained", trained}};
          };
          json info{{"format_version", io::kFormatVersion},
                    {"fusion", part(snap.fusion_path, io::to_json(snap.fusion.config), snap.fusion.params.seed,
                                    snap.fusion.epochs, snap.fusion.trained)},
                    {"generator", part(snap.generator_path, io::to_json(snap.generator.config),
                                       snap.generator.params.seed, snap.generator.epochs, snap.generator.trained)},
                    {"context_dim", snap.fusion.config.dim},
                    {"horizon", decomp::kHorizon},
                    {"default_seed", cfg_.seed},
                    {"grid_cells", snap.grid.size()},
                    {"fleet_sites", snap.fleet.size()},
                    {"corpus_sites", snap.sites.size()}};
          info["fusion"]["train_seed"] = snap.fusion.train_seed;
          info["generator"]["train_seed"] = snap.generator.train_seed;
          reply(res, 200, info);
        }));

  s.Get("/grid", guarded([](const Snapshot& snap, const httplib::Request&, httplib::Response& res) {
          json cells = json::array();
          for (const auto& c : snap.grid)
            cells.push_back({{"cell_id", c.cell_id},
                             {"latitude", c.latitude},
                             {"longitude", c.longitude},
                             {"feasible", c.feasible},
                             {"has_visual", c.visual.has_value()},
                             {"pois", c.pois.records.size()}});
          reply(res, 200, {{"cells", cells}});
        }));

  s.Post("/generate", guarded([this](const Snapshot& snap, const httplib::Request& req, httplib::Response& res) {
           const json p = parse_body(req);
           const auto run_seed = opt_uint(p, "seed").value_or(cfg_.seed);
           const auto id = opt_string(p, "cell_id");
           const bool inline_ctx = p.contains("context") && !p["context"].is_null();
           if (id.has_value() == inline_ctx)
             throw FieldError(id ? "context" : "cell_id", "give exactly one of 'cell_id' or 'context'");
           io::TrafficRecord rec;
           if (id) {
             const fusion::PoiSet* pois = nullptr;
             const std::optional<std::vector<double>>* visual = nullptr;
             for (const auto& c : snap.grid)
               if (c.cell_id == *id) visual = &c.visual, pois = &c.pois;
             if (!pois)
               for (const auto& site : snap.sites)
                 if (site.site_id == *id) visual = &site.visual, pois = &site.pois;
             if (!pois) throw NotFound("unknown cell or site '" + *id + "'");
             const auto ctx = fusion::embed_location(snap.fusion, *visual, *pois).c;
             rec = pipeline::generate_record(snap.generator, *id, ctx, pipeline::site_seed(run_seed, *id));
           } else {
             const json& c = p["context"];
             std::vector<double> ctx;
             if (!c.is_array()) throw FieldError("context", "'context' must be an array of numbers");
             for (const auto& v : c) {
               if (!v.is_number()) throw FieldError("context", "'context' must be an array of numbers");
               ctx.push_back(v.get<double>());
             }
             if (ctx.size() != snap.generator.config.context_dim)
               throw FieldError("context", "'context' must have " + std::to_string(snap.generator.config.context_dim) +
                                               " values");
             rec = pipeline::generate_record(snap.generator, "inline", ctx, run_seed);
           }
           res.status = 200;
           res.set_content(generation_body(rec), "application/json");
         }));

  s.Post("/rank", guarded([this](const Snapshot& snap, const httplib::Request& req, httplib::Response& res) {
           json p = parse_body(req);
           const auto async = p.contains("async") && p["async"].is_boolean() && p["async"].get<bool>();
           if (async) {
             // Validate up front so a bad request never becomes a failed job.
             (void)rank_params(p, cfg_.seed);
             if (snap.grid.empty()) throw InvalidInput("no grid loaded");
             const auto id = enqueue("rank", p);
             reply(res, 202, {{"job_id", id}, {"status", "queued"}});
             return;
           }
           res.status = 200;
           res.set_content(ranking_body(run_rank(snap, p, cfg_.seed)), "application/x-ndjson");
         }));

  s.Post("/ops/simulate", guarded([](const Snapshot& snap, const httplib::Request& req, httplib::Response& res) {
           const json p = parse_body(req);
           const auto id = opt_string(p, "site_id");
           if (!id) throw FieldError("site_id", "'site_id' is required");
           const auto window = opt_uint(p, "window").value_or(6);
           if (window < 2) throw FieldError("window", "'window' must be >= 2");
           const auto threshold = opt_number(p, "threshold");
           if (threshold && !(*threshold >= 0.0)) throw FieldError("threshold", "'threshold' must be >= 0");
           const auto multiple = opt_number(p, "sigma_multiple").value_or(1.0);
           if (!(multiple >= 0.0)) throw FieldError("sigma_multiple", "'sigma_multiple' must be >= 0");
           for (const auto& site : snap.fleet)
             if (site.site_id == *id) {
               auto sim = ops::simulate_site(site, {window, multiple, threshold});
               json body = io::to_json(sim);
               body["window"] = window;
               reply(res, 200, body);
               return;
             }
           throw NotFound("unknown site '" + *id + "'");
         }));

  s.Get(R"(/jobs/([A-Za-z0-9\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(jobs_mu_);
    auto it = jobs_.find(req.matches[1].str());
    if (it == jobs_.end()) return fail(res, 404, "unknown job '" + req.matches[1].str() + "'");
    const auto& j = it->second;
    json body{{"id", j.id}, {"kind", j.kind}, {"params", j.params}, {"status", j.status}};
    if (j.status == "done") body["result"] = j.result;
    if (j.status == "failed") body["error"] = j.error;
    reply(res, 200, body);
  });

  s.Post("/model/reload", [this](const httplib::Request&, httplib::Response& res) {
    try {
      load();
      reply(res, 200, {{"status", "ready"}});
    } catch (const std::exception& e) {
      fail(res, 500, std::string("reload failed, previous snapshot kept: ") + e.what());
    }
  });
}

}  // namespace cellflow::service
