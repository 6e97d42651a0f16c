#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "cellflow/io.hpp"

namespace httplib {
class Server;
}

namespace cellflow::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string fusion_path;
  std::string generator_path;
  std::string grid_path;
  std::string fleet_path;
  std::string embeddings_path;  // optional: lets /generate resolve corpus site ids
  std::uint64_t seed = 42;      // default run seed when a request omits one
  std::size_t workers = 4;
};

/// Overrides fields from CELLFLOW_HOST, CELLFLOW_PORT, CELLFLOW_FUSION, CELLFLOW_GENERATOR,
/// CELLFLOW_GRID, CELLFLOW_FLEET, CELLFLOW_EMBEDDINGS, CELLFLOW_SEED and CELLFLOW_WORKERS.
/// A malformed numeric value throws InvalidInput naming the variable.
void apply_env(ServiceConfig& cfg);

/// Immutable model and data view shared by all request handlers.
struct Snapshot {
  fusion::FusionModel fusion;
  gen::GeneratorModel generator;
  std::vector<corpus::GridCell> grid;
  std::vector<corpus::FleetSite> fleet;
  std::vector<fusion::LocationInput> sites;
  std::string fusion_path, generator_path;
};

/// Reads every configured file. Throws on the first failure.
std::shared_ptr<const Snapshot> load_snapshot(const ServiceConfig& cfg);

struct JobRecord {
  std::string id;
  std::string kind;
  io::json params;
  std::string status;  // queued | running | done | failed
  io::json result;     // set once done
  std::string error;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Loads from the configured paths and swaps the snapshot in.
  void load();
  void install(std::shared_ptr<const Snapshot> snap);
  std::shared_ptr<const Snapshot> snapshot() const;
  bool ready() const { return snapshot() != nullptr; }

  /// Binds the configured address (port 0 picks a free port) and returns the bound port.
  int bind();
  /// Serves until stop(). bind() must have been called.
  void run();
  void stop();

  const ServiceConfig& config() const { return cfg_; }

 private:
  void routes();
  std::string enqueue(const std::string& kind, io::json params);
  void worker_loop();

  ServiceConfig cfg_;
  std::unique_ptr<httplib::Server> http_;
  std::shared_ptr<const Snapshot> snap_;
  mutable std::mutex snap_mu_;

  std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<std::string> queue_;
  std::uint64_t next_job_ = 1;
  bool stopping_ = false;
  std::atomic<bool> stop_requested_{false}, run_entered_{false}, run_returned_{false};
  std::thread worker_;
};

/// Body of a /rank response: the ranking file text.
std::string ranking_body(const planning::RankingResult& r);
/// Body of a /generate response: one generated-traffic record.
std::string generation_body(const io::TrafficRecord& r);

}  // namespace cellflow::service
