#include "voxdet/service.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <chrono>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "voxdet/binary_io.hpp"
#include "voxdet/eval.hpp"
#include "voxdet/field.hpp"
#include "voxdet/image.hpp"
#include "voxdet/meshio.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>

namespace voxdet {

using nlohmann::json;

namespace {

// Maps to an HTTP status at the route boundary.
struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, {{"error", message}}, status);
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const HttpError& e) {
      send_error(res, e.status, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    auto body = json::parse(req.body);
    if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
    return body;
  } catch (const json::exception& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

std::string require_string(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_string()) throw HttpError(400, std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

OccupancyGrid decode_grid(const std::string& b64) {
  try {
    return decode_artv(base64_decode(b64));
  } catch (const FormatError& e) {
    throw HttpError(400, std::string("malformed ARTV: ") + e.what());
  } catch (const GridError& e) {
    throw HttpError(400, std::string("malformed ARTV: ") + e.what());
  }
}

std::string flat_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : ",") + flat_value(e);
    return out;
  }
  if (v.is_number()) return v.dump();
  throw HttpError(400, "config values must be scalars or lists");
}

json record_json(const TrainRecord& r) {
  return {{"iter", r.iter},       {"stage", r.stage}, {"lambda", r.lambda}, {"l_sds", r.l_sds},
          {"l_reg", r.l_reg},     {"l_total", r.l_total}, {"ms", r.ms}};
}

json job_json(const JobRecord& j) {
  json out = {{"id", j.id},
              {"state", to_string(j.state)},
              {"config_digest", j.config_digest},
              {"progress", {{"iter", j.iter}, {"total", j.total}}},
              {"checkpoint_paths", j.checkpoint_paths}};
  out["latest"] = j.latest ? record_json(*j.latest) : json(nullptr);
  if (!j.checkpoint_id.empty()) out["checkpoint_id"] = j.checkpoint_id;
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

int config_int(const nn::CheckpointData& data, const char* key) {
  const auto* v = data.find_config(key);
  return v ? std::atoi(v->c_str()) : 0;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (c == '\n' || c == '\r') continue;
    if (c == '-') c = '+';
    else if (c == '_') c = '/';
    else if (c == ' ') c = '+';  // '+' decoded as a space in query strings
    s.push_back(c);
  }
  while (s.size() % 4) s.push_back('=');
  std::size_t pad = 0;
  if (!s.empty() && s.back() == '=') ++pad;
  if (s.size() > 1 && s[s.size() - 2] == '=') ++pad;
  std::string out(3 * s.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(s.data()), static_cast<int>(s.size()));
  if (n < 0 || s.find('=') < s.size() - pad) throw FormatError("malformed base64");
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

CheckpointStore::CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".artc") continue;
    try {
      const std::string bytes = read_file(entry.path());
      const auto data = nn::decode_artc(bytes);
      from_checkpoint(data);  // skip files that are not detailizer checkpoints
      const std::string id = add_locked(bytes, data);
      if (entry.path().stem() != id) std::filesystem::rename(entry.path(), dir_ / (id + ".artc"));
    } catch (const std::exception&) {
    }
  }
}

std::string CheckpointStore::add_locked(const std::string& artc, const nn::CheckpointData& data) {
  const std::string id = sha256_hex(artc);
  if (index_.count(id)) return id;
  const auto* prompt = data.find_config("train.prompt");
  index_[id] = {id, prompt ? *prompt : "", config_int(data, "k"), config_int(data, "K")};
  return id;
}

std::string CheckpointStore::put(const nn::CheckpointData& data) { return put_bytes(nn::encode_artc(data)); }

std::string CheckpointStore::put_bytes(const std::string& artc) {
  const auto data = nn::decode_artc(artc);
  from_checkpoint(data);  // throws CorruptCheckpoint for non-detailizer data
  std::lock_guard lock(mutex_);
  const std::string id = add_locked(artc, data);
  const auto path = dir_ / (id + ".artc");
  if (!std::filesystem::exists(path)) write_file(path, artc);
  return id;
}

std::shared_ptr<const DetailizerModel> CheckpointStore::model(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (!index_.count(id)) return nullptr;
  auto& slot = cache_[id];
  if (!slot) slot = std::make_shared<const DetailizerModel>(load_detailizer(dir_ / (id + ".artc")));
  return slot;
}

std::optional<CheckpointInfo> CheckpointStore::info(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<CheckpointInfo> CheckpointStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<CheckpointInfo> out;
  for (const auto& [id, info] : index_) out.push_back(info);
  return out;
}

const char* to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "unknown";
}

ServiceOptions ServiceOptions::from_env() {
  ServiceOptions o;
  if (const char* dir = std::getenv("VOXDET_CHECKPOINT_DIR"); dir && *dir) o.checkpoint_dir = dir;
  if (const char* bind = std::getenv("VOXDET_BIND"); bind && *bind) {
    const std::string b = bind;
    const auto colon = b.rfind(':');
    try {
      if (colon == std::string::npos) {
        o.port = std::stoi(b);
      } else {
        o.host = b.substr(0, colon);
        o.port = std::stoi(b.substr(colon + 1));
      }
    } catch (const std::exception&) {
      throw ConfigError("VOXDET_BIND: expected host:port, got '" + b + "'");
    }
  }
  return o;
}

struct Service::Job {
  JobRecord record;
  TrainConfig config;
  std::vector<OccupancyGrid> dataset;
  std::unique_ptr<GuidanceOracle> oracle;
  std::vector<TrainRecord> history;
};

Service::Service(ServiceOptions options)
    : options_(std::move(options)), store_(options_.checkpoint_dir), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(jobs_mutex_);
    shutting_down_ = true;
  }
  jobs_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

bool Service::listen() { return server_->listen(options_.host, options_.port); }
int Service::bind_any_port() { return server_->bind_to_any_port(options_.host); }
bool Service::listen_after_bind() { return server_->listen_after_bind(); }
void Service::stop() {
  {
    std::lock_guard lock(jobs_mutex_);
    shutting_down_ = true;
  }
  jobs_cv_.notify_all();
  server_->stop();
}

std::optional<JobRecord> Service::job(const std::string& id) const {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->record;
}

void Service::wait_for_job(const std::string& id) {
  std::unique_lock lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return;
  auto job = it->second;
  jobs_cv_.wait(lock, [&] { return job->record.state == JobState::Done || job->record.state == JobState::Failed; });
}

void Service::run_job(std::shared_ptr<Job> job) {
  {
    std::lock_guard lock(jobs_mutex_);
    job->record.state = JobState::Running;
  }
  jobs_cv_.notify_all();
  try {
    TrainHooks hooks;
    hooks.on_record = [&](const TrainRecord& r) {
      {
        std::lock_guard lock(jobs_mutex_);
        job->history.push_back(r);
        job->record.iter = r.iter + 1;
        job->record.latest = r;
      }
      jobs_cv_.notify_all();
    };
    hooks.on_checkpoint = [&](const std::filesystem::path& p) {
      std::lock_guard lock(jobs_mutex_);
      job->record.checkpoint_paths.push_back(p.string());
    };
    hooks.should_stop = [&] {
      std::lock_guard lock(jobs_mutex_);
      return shutting_down_;
    };
    const TrainResult result = run_two_stage(job->config, job->dataset, *job->oracle, hooks);
    if (result.stopped) throw TrainError("stopped: service shutting down");
    nn::CheckpointData data = to_checkpoint(result.model);
    data.config.emplace_back("train.prompt", job->config.prompt);
    const std::string id = store_.put(data);
    std::lock_guard lock(jobs_mutex_);
    job->record.checkpoint_id = id;
    job->record.state = JobState::Done;
  } catch (const std::exception& e) {
    std::lock_guard lock(jobs_mutex_);
    job->record.error = e.what();
    job->record.state = JobState::Failed;
  }
  jobs_cv_.notify_all();
}

void Service::install_routes() {
  auto& s = *server_;

  s.Post("/api/detailize", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           const std::string id = require_string(body, "checkpoint_id");
           const auto model = store_.model(id);
           if (!model) throw HttpError(404, "unknown checkpoint '" + id + "'");
           const OccupancyGrid grid = decode_grid(require_string(body, "grid"));
           if (grid.dims() != Dims::cube(model->config.k))
             throw HttpError(422, "grid dims do not match the checkpoint's " + std::to_string(model->config.k) + "^3");
           const double iso = body.value("iso", 30.0);
           if (!(iso > 0.0)) throw HttpError(422, "iso must be > 0");

           nn::NoGradGuard no_grad;
           const auto t0 = std::chrono::steady_clock::now();
           const DetailizedShape shape = detailize(*model, grid);
           TriangleMesh mesh = marching_cubes(shape.density, iso);
           const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
           mesh = color_vertices(std::move(mesh), shape.albedo);
           const double iou = strict_iou(grid, voxelize_density(shape.density, 30.0, grid.dims().x));
           send_json(res, {{"mesh", base64_encode(encode_ply(mesh))},
                           {"elapsed_ms", ms},
                           {"strict_iou_vs_input", iou},
                           {"vertices", mesh.vertices.size()},
                           {"triangles", mesh.triangles.size()}});
         }));

  s.Post("/api/train", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           auto job = std::make_shared<Job>();
           FlatConfig flat;
           if (const auto c = body.find("config"); c != body.end()) {
             if (!c->is_object()) throw HttpError(400, "config must be an object");
             for (const auto& [key, value] : c->items()) flat.set(key, flat_value(value));
           }
           try {
             job->config = TrainConfig::from_flat(flat);
             job->config.validate();
           } catch (const std::exception& e) {
             throw HttpError(400, e.what());
           }
           const auto d = body.find("dataset");
           if (d == body.end() || !d->is_array() || d->empty()) throw HttpError(400, "dataset must be a nonempty array");
           for (const auto& item : *d) {
             if (item.is_string()) {
               job->dataset.push_back(decode_grid(item.get<std::string>()));
             } else if (item.is_object()) {
               auto g = decode_grid(require_string(item, "grid"));
               g.set_label(item.value("label", std::string()));
               job->dataset.push_back(std::move(g));
             } else {
               throw HttpError(400, "dataset entries are base64 ARTV strings or {grid, label}");
             }
             if (job->dataset.back().dims() != Dims::cube(job->config.model.k))
               throw HttpError(400, "dataset grid is not " + std::to_string(job->config.model.k) + "^3");
           }
           if (job->config.stage1_index < 0 || job->config.stage1_index >= static_cast<int>(job->dataset.size()))
             throw HttpError(400, "BadStageIndex");

           const json oracle = body.value("oracle", json{{"name", "procedural_stylizer"}});
           try {
             const std::string name = oracle.value("name", std::string("procedural_stylizer"));
             if (name == "target_match") {
               auto tm = std::make_unique<TargetMatchOracle>();
               for (const auto& ref : oracle.value("references", json::array())) {
                 const FloatField density = decode_artf(base64_decode(require_string(ref, "density")));
                 const FloatField albedo = decode_artf(base64_decode(require_string(ref, "albedo")));
                 tm->add(ref.value("subject", std::string()), ReferenceShape::from_fields(density, albedo));
               }
               job->oracle = std::move(tm);
             } else {
               std::map<std::string, std::string> params;
               for (const auto& [key, value] : oracle.items())
                 if (key != "name") params[key] = flat_value(value);
               if (name == "target_match" || params.count("density"))
                 throw HttpError(400, "file-backed oracles are not available over HTTP");
               job->oracle = make_oracle(name, params);
             }
           } catch (const HttpError&) {
             throw;
           } catch (const std::exception& e) {
             throw HttpError(400, std::string("oracle: ") + e.what());
           }

           std::string canonical;
           for (const auto& [key, value] : flat.values()) canonical += key + "=" + value + "\n";
           job->record.config_digest = sha256_hex(canonical);
           job->record.total = job->config.total_iterations();

           std::lock_guard lock(jobs_mutex_);
           for (const auto& [id, other] : jobs_)
             if (other->record.state == JobState::Queued || other->record.state == JobState::Running)
               throw HttpError(409, "job " + id + " is still " + to_string(other->record.state));
           if (shutting_down_) throw HttpError(503, "service is shutting down");
           job->record.id = "job-" + std::to_string(next_job_++);
           if (job->config.checkpoint_every > 0)
             job->config.checkpoint_dir = store_.dir() / "jobs" / job->record.id;
           else
             job->config.checkpoint_dir.clear();
           jobs_[job->record.id] = job;
           if (worker_.joinable()) worker_.join();  // previous job has finished
           worker_ = std::thread([this, job] { run_job(job); });
           send_json(res, {{"job_id", job->record.id}}, 202);
         }));

  s.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const auto record = job(req.matches[1]);
          if (!record) throw HttpError(404, "unknown job");
          send_json(res, job_json(*record));
        }));

  s.Get(R"(/api/jobs/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          std::shared_ptr<Job> job;
          {
            std::lock_guard lock(jobs_mutex_);
            const auto it = jobs_.find(req.matches[1]);
            if (it == jobs_.end()) throw HttpError(404, "unknown job");
            job = it->second;
          }
          int every = 1;
          if (req.has_param("every")) {
            try {
              every = std::stoi(req.get_param_value("every"));
            } catch (const std::exception&) {
              throw HttpError(400, "every must be an integer");
            }
            if (every < 1) throw HttpError(400, "every must be >= 1");
          }
          auto sent = std::make_shared<std::size_t>(0);
          res.set_chunked_content_provider(
              "text/event-stream", [this, job, every, sent](std::size_t, httplib::DataSink& sink) {
                std::unique_lock lock(jobs_mutex_);
                auto finished = [&] {
                  return job->record.state == JobState::Done || job->record.state == JobState::Failed;
                };
                jobs_cv_.wait_for(lock, std::chrono::milliseconds(500),
                                  [&] { return job->history.size() > *sent || finished() || shutting_down_; });
                std::string out;
                for (; *sent < job->history.size(); ++*sent) {
                  const auto& r = job->history[*sent];
                  if ((r.iter + 1) % every == 0 || r.iter + 1 == job->record.total)
                    out += "data: " + record_json(r).dump() + "\n\n";
                }
                const bool done = finished() || shutting_down_;
                json final_event = job_json(job->record);
                lock.unlock();
                if (done) out += "event: done\ndata: " + final_event.dump() + "\n\n";
                if (!out.empty() && !sink.write(out.data(), out.size())) return false;
                if (done) sink.done();
                return true;
              });
        }));

  s.Get("/api/render", guarded([this](const httplib::Request& req, httplib::Response& res) {
          auto param = [&](const char* key) -> std::string {
            if (!req.has_param(key)) throw HttpError(400, std::string("missing parameter '") + key + "'");
            return req.get_param_value(key);
          };
          auto number = [&](const char* key, double fallback, bool required) {
            if (!required && !req.has_param(key)) return fallback;
            try {
              std::size_t used = 0;
              const std::string v = param(key);
              const double x = std::stod(v, &used);
              if (used != v.size()) throw std::invalid_argument(v);
              return x;
            } catch (const HttpError&) {
              throw;
            } catch (const std::exception&) {
              throw HttpError(400, std::string("parameter '") + key + "' is not a number");
            }
          };
          const std::string id = param("checkpoint");
          const auto model = store_.model(id);
          if (!model) throw HttpError(404, "unknown checkpoint '" + id + "'");
          const OccupancyGrid grid = decode_grid(param("grid"));
          if (grid.dims() != Dims::cube(model->config.k))
            throw HttpError(422, "grid dims do not match the checkpoint's " + std::to_string(model->config.k) + "^3");
          const double az = number("azimuth", 0.0, true), el = number("elevation", 0.0, true);
          const double fov = number("fov", 50.0, false), radius = number("radius", 2.0, false);
          const double size = number("size", 256.0, false), samples = number("samples", 192.0, false);
          if (size < 1 || size > 2048 || samples < 1 || samples > 4096)
            throw HttpError(422, "size must be in [1,2048] and samples in [1,4096]");
          Camera cam;
          RenderOptions opts;
          opts.samples = static_cast<int>(samples);
          try {
            cam = orbit_camera(az, el, radius, fov, static_cast<int>(size), static_cast<int>(size));
          } catch (const RenderError& e) {
            throw HttpError(422, e.what());
          }
          nn::NoGradGuard no_grad;
          const DetailizedShape shape = detailize(*model, grid);
          const RenderedView view = render(shape.density, shape.albedo, cam, opts);
          res.set_content(encode_png(view.rgb_image()), "image/png");
        }));

  s.Get("/api/checkpoints", guarded([this](const httplib::Request&, httplib::Response& res) {
          json list = json::array();
          for (const auto& c : store_.list())
            list.push_back({{"id", c.id}, {"prompt", c.prompt}, {"k", c.k}, {"K", c.K}});
          send_json(res, list);
        }));

  s.Post("/api/checkpoints", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           std::string id;
           try {
             id = store_.put_bytes(base64_decode(require_string(body, "data")));
           } catch (const HttpError&) {
             throw;
           } catch (const std::exception& e) {
             throw HttpError(400, std::string("invalid checkpoint: ") + e.what());
           }
           send_json(res, {{"id", id}}, 201);
         }));
}

}  // namespace voxdet
