#pragma once

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "voxdet/detailizer.hpp"
#include "voxdet/trainer.hpp"

namespace httplib {
class Server;
}

namespace voxdet {

std::string base64_encode(std::string_view bytes);
// Accepts standard and URL-safe alphabets, with or without padding.
// Throws FormatError on malformed input.
std::string base64_decode(std::string_view text);
// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

struct CheckpointInfo {
  std::string id;  // SHA-256 of the stored ARTC bytes
  std::string prompt;
  int k = 0;
  int K = 0;
};

// Content-addressed detailizer checkpoints in one directory, stored as
// <id>.artc. Loaded models are cached and shared read-only.
class CheckpointStore {
 public:
  // Indexes every readable .artc already in `dir` (created if missing).
  explicit CheckpointStore(std::filesystem::path dir);

  // Returns the id; storing identical bytes twice is a no-op.
  std::string put(const nn::CheckpointData& data);
  std::string put_bytes(const std::string& artc);
  // nullptr for an unknown id.
  std::shared_ptr<const DetailizerModel> model(const std::string& id);
  std::optional<CheckpointInfo> info(const std::string& id) const;
  std::vector<CheckpointInfo> list() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::string add_locked(const std::string& artc, const nn::CheckpointData& data);

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, CheckpointInfo> index_;
  std::map<std::string, std::shared_ptr<const DetailizerModel>> cache_;
};

enum class JobState { Queued, Running, Done, Failed };
const char* to_string(JobState s);

struct JobRecord {
  std::string id;
  JobState state = JobState::Queued;
  std::string config_digest;
  int iter = 0;   // iterations finished
  int total = 0;
  std::optional<TrainRecord> latest;
  std::vector<std::string> checkpoint_paths;
  std::string checkpoint_id;  // set when done
  std::string error;          // set when failed
};

struct ServiceOptions {
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::string host = "127.0.0.1";
  int port = 8080;

  // VOXDET_BIND ("host:port" or "port") and VOXDET_CHECKPOINT_DIR override
  // the defaults.
  static ServiceOptions from_env();
};

// HTTP API over the detailizer, trainer and renderer:
//   POST /api/detailize          {checkpoint_id, grid, iso?} -> {mesh, elapsed_ms, strict_iou_vs_input}
//   POST /api/train              {config, dataset, oracle?} -> {job_id}
//   GET  /api/jobs/{id}          job record
//   GET  /api/jobs/{id}/events   server-sent events, one loss record per `every` iterations
//   GET  /api/render             ?checkpoint&grid&azimuth&elevation[&fov&size&radius&samples] -> PNG
//   GET  /api/checkpoints        [{id, prompt, k, K}]
//   POST /api/checkpoints        {data: base64 ARTC} -> {id}
// Binary payloads are base64 inside JSON.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  httplib::Server& server() { return *server_; }
  CheckpointStore& store() { return store_; }
  // Binds and serves until stop(); returns false if binding failed.
  bool listen();
  // Binds to an ephemeral port on the configured host; returns the port or -1.
  int bind_any_port();
  bool listen_after_bind();
  void stop();

  std::optional<JobRecord> job(const std::string& id) const;
  // Blocks until the job leaves the running state.
  void wait_for_job(const std::string& id);

 private:
  struct Job;
  void install_routes();
  void run_job(std::shared_ptr<Job> job);

  ServiceOptions options_;
  CheckpointStore store_;
  std::unique_ptr<httplib::Server> server_;
  mutable std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::thread worker_;
  bool shutting_down_ = false;
  int next_job_ = 1;
};

}  // namespace voxdet
