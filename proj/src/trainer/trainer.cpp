#include "voxdet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "voxdet/binary_io.hpp"
#include "voxdet/ops.hpp"

namespace voxdet {

namespace {

bool caller_key(const std::string& key) {
  for (const char* p : {"oracle", "dataset", "eval.", "output", "resume", "input", "subject"})
    if (key.rfind(p, 0) == 0) return true;
  return false;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw InvalidConfig("InvalidConfig: " + why); };
  if (stage1_iterations < 0 || stage2_iterations < 0) fail("iterations must be >= 0");
  if (views < 1) fail("views must be >= 1");
  if (!(lambda_end > 0.0) || !(lambda_start >= lambda_end)) fail("need lambda_start >= lambda_end > 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (!(t_min >= 0.0 && t_min <= t_max && t_max <= 1.0)) fail("need 0 <= t_min <= t_max <= 1");
  if (!(camera.elevation_min_deg <= camera.elevation_max_deg)) fail("camera elevation range is empty");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  try {
    orbit_camera(0.0, camera.elevation_min_deg, camera.radius, camera.fov_deg, camera.width, camera.height);
    render.validate();
  } catch (const RenderError& e) {
    fail(e.what());
  }
  model.validate();
}

TrainConfig TrainConfig::from_flat(const FlatConfig& cfg) {
  static const std::vector<std::string> known = {
      "stage1_iterations", "stage2_iterations", "stage1_index", "views", "lambda_start", "lambda_end",
      "regularize", "lr", "clip_norm", "t_min", "t_max", "camera.radius", "camera.fov", "camera.elevation_min",
      "camera.elevation_max", "image_size", "image_width", "image_height", "render.samples",
      "render.density_scale", "render.background", "render.jitter", "model.k", "model.K", "model.conv_channels",
      "model.up_channels", "model.leaky_slope", "model.seed", "prompt", "seed", "checkpoint_every",
      "checkpoint_dir"};
  for (const auto& [key, value] : cfg.values())
    if (!caller_key(key) && std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("config: unknown key '" + key + "'");

  TrainConfig c;
  c.stage1_iterations = cfg.get_int("stage1_iterations", c.stage1_iterations);
  c.stage2_iterations = cfg.get_int("stage2_iterations", c.stage2_iterations);
  c.stage1_index = cfg.get_int("stage1_index", c.stage1_index);
  c.views = cfg.get_int("views", c.views);
  c.lambda_start = cfg.get_double("lambda_start", c.lambda_start);
  c.lambda_end = cfg.get_double("lambda_end", c.lambda_end);
  c.regularize = cfg.get_bool("regularize", c.regularize);
  c.lr = cfg.get_double("lr", c.lr);
  c.clip_norm = cfg.get_double("clip_norm", c.clip_norm);
  c.t_min = cfg.get_double("t_min", c.t_min);
  c.t_max = cfg.get_double("t_max", c.t_max);
  c.camera.radius = cfg.get_double("camera.radius", c.camera.radius);
  c.camera.fov_deg = cfg.get_double("camera.fov", c.camera.fov_deg);
  c.camera.elevation_min_deg = cfg.get_double("camera.elevation_min", c.camera.elevation_min_deg);
  c.camera.elevation_max_deg = cfg.get_double("camera.elevation_max", c.camera.elevation_max_deg);
  const int size = cfg.get_int("image_size", c.camera.width);
  c.camera.width = cfg.get_int("image_width", size);
  c.camera.height = cfg.get_int("image_height", size);
  c.render.samples = cfg.get_int("render.samples", c.render.samples);
  c.render.density_scale = cfg.get_double("render.density_scale", c.render.density_scale);
  const auto bg = cfg.get_double_list("render.background", {1.0, 1.0, 1.0});
  if (bg.size() != 3) throw ConfigError("config: render.background expects r,g,b");
  c.render.background = Eigen::Vector3d(bg[0], bg[1], bg[2]).cast<float>();
  c.render.jitter = cfg.get_bool("render.jitter", c.render.jitter);
  c.model.k = cfg.get_int("model.k", c.model.k);
  c.model.K = cfg.get_int("model.K", c.model.K);
  c.model.conv_channels = cfg.get_int_list("model.conv_channels", c.model.conv_channels);
  c.model.up_channels = cfg.get_int_list("model.up_channels", c.model.up_channels);
  c.model.leaky_slope = static_cast<float>(cfg.get_double("model.leaky_slope", c.model.leaky_slope));
  c.model.seed = cfg.get_u64("model.seed", c.model.seed);
  c.prompt = cfg.get("prompt", c.prompt);
  c.seed = cfg.get_u64("seed", c.seed);
  c.checkpoint_every = cfg.get_int("checkpoint_every", c.checkpoint_every);
  c.checkpoint_dir = cfg.get("checkpoint_dir", "");
  return c;
}

bool TrainRecord::same_losses(const TrainRecord& o) const {
  return iter == o.iter && stage == o.stage && lambda == o.lambda && l_sds == o.l_sds && l_reg == o.l_reg &&
         l_total == o.l_total;
}

std::string TrainHistory::to_csv() const {
  std::string out = "iter,stage,lambda,l_sds,l_reg,l_total,ms\n";
  for (const auto& r : records)
    out += std::to_string(r.iter) + "," + std::to_string(r.stage) + "," + fmt(r.lambda) + "," + fmt(r.l_sds) + "," +
           fmt(r.l_reg) + "," + fmt(r.l_total) + "," + fmt(r.ms) + "\n";
  return out;
}

TrainHistory TrainHistory::from_csv(std::string_view text) {
  TrainHistory h;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("iter,stage,lambda", 0) != 0)
    throw FormatError("history: missing CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrainRecord r;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf", &r.iter, &r.stage, &r.lambda, &r.l_sds, &r.l_reg,
                    &r.l_total, &r.ms) != 7)
      throw FormatError("history: malformed row '" + line + "'");
    h.records.push_back(r);
  }
  return h;
}

bool TrainHistory::same_losses(const TrainHistory& o) const {
  return records.size() == o.records.size() &&
         std::equal(records.begin(), records.end(), o.records.begin(),
                    [](const TrainRecord& a, const TrainRecord& b) { return a.same_losses(b); });
}

double lambda_schedule(int iter, int total, double lambda_start, double lambda_end) {
  if (total < 1 || iter < 0 || iter > total || !(lambda_end > 0.0) || !(lambda_start >= lambda_end))
    throw TrainError("InvalidRange: lambda_schedule(" + std::to_string(iter) + ", " + std::to_string(total) + ")");
  if (iter == 0) return lambda_start;
  if (iter == total) return lambda_end;
  const double f = static_cast<double>(iter) / total;
  const double v = std::exp(std::log(lambda_start) + (std::log(lambda_end) - std::log(lambda_start)) * f);
  return std::clamp(v, lambda_end, lambda_start);
}

std::vector<Camera> sample_cameras(Rng& rng, const TrainConfig& config) {
  const double base = rng.uniform(0.0, 90.0);
  const auto& c = config.camera;
  const double elevation = rng.uniform(c.elevation_min_deg, c.elevation_max_deg);
  std::vector<Camera> cams;
  for (int i = 0; i < config.views; ++i)
    cams.push_back(orbit_camera(base + 360.0 * i / config.views, elevation, c.radius, c.fov_deg, c.width, c.height));
  return cams;
}

Trainer::Trainer(const TrainConfig& config, DetailizerModel model)
    : config_(config),
      model_(std::move(model)),
      adam_(model_.parameters(), nn::AdamOptions{static_cast<float>(config.lr)}),
      rng_(config.seed) {}

StepLosses Trainer::step(const OccupancyGrid& coarse, const std::string& subject, const GuidanceOracle& oracle,
                         double lambda) {
  GuidanceRequest request;
  request.cameras = sample_cameras(rng_, config_);
  request.t = rng_.uniform(config_.t_min, config_.t_max);
  request.seed = rng_.next();
  request.prompt = PromptSpec(config_.prompt);
  request.subject = subject;
  request.render_options = config_.render;
  if (request.render_options.jitter) request.render_options.jitter_seed = rng_.next();

  adam_.zero_grad();
  const DetailizedShape shape = detailize(model_, coarse);
  std::vector<nn::Tensor> alphas;
  std::vector<MaskImage> reference;
  for (const auto& cam : request.cameras) {
    const RenderedView v = render(shape.density, shape.albedo, cam, request.render_options);
    request.views.push_back(v.rgb);
    alphas.push_back(v.alpha);
    reference.push_back(render_occupancy_mask(coarse, cam, request.render_options));
  }
  const GuidanceTargets targets = oracle.denoise(request);
  const nn::Tensor sds = sds_loss(request.views, targets);
  const nn::Tensor reg = reg_loss(alphas, reference);
  const nn::Tensor loss = total_loss(sds, reg, lambda);
  nn::backward(loss);

  auto params = adam_.params();
  for (auto& p : params) p.grad();  // parameters off the loss path get zero gradients
  nn::clip_grad_norm(params, config_.clip_norm);
  adam_.step();
  adam_.zero_grad();
  return {sds.item(), reg.item(), loss.item()};
}

nn::CheckpointData Trainer::checkpoint(int next_iter) const {
  nn::CheckpointData data = to_checkpoint(model_);
  data.config.emplace_back("train.next_iter", std::to_string(next_iter));
  data.config.emplace_back("train.rng", rng_.state());
  data.config.emplace_back("adam.step", std::to_string(adam_.step_count()));
  data.config.emplace_back("train.prompt", config_.prompt);
  auto named = model_.named_parameters();
  auto& m = const_cast<nn::Adam&>(adam_).first_moments();
  auto& v = const_cast<nn::Adam&>(adam_).second_moments();
  for (std::size_t i = 0; i < named.size(); ++i) {
    data.tensors.push_back({"adam.m." + named[i].first, named[i].second.shape(), m[i]});
    data.tensors.push_back({"adam.v." + named[i].first, named[i].second.shape(), v[i]});
  }
  return data;
}

int Trainer::restore(const nn::CheckpointData& data) {
  const DetailizerModel loaded = from_checkpoint(data);
  if (loaded.config.to_pairs() != model_.config.to_pairs())
    throw TrainError("checkpoint model config does not match the training config");
  const auto* next = data.find_config("train.next_iter");
  const auto* rng_state = data.find_config("train.rng");
  const auto* step = data.find_config("adam.step");
  if (!next || !rng_state || !step) throw nn::CorruptCheckpoint("CorruptCheckpoint: not a training checkpoint");

  auto mine = model_.named_parameters();
  auto theirs = loaded.named_parameters();
  auto& m = adam_.first_moments();
  auto& v = adam_.second_moments();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const auto src = theirs[i].second.data();
    std::copy(src.begin(), src.end(), mine[i].second.data().begin());
    const auto* em = data.find_tensor("adam.m." + mine[i].first);
    const auto* ev = data.find_tensor("adam.v." + mine[i].first);
    if (!em || !ev || em->values.size() != m[i].size() || ev->values.size() != v[i].size())
      throw nn::CorruptCheckpoint("CorruptCheckpoint: optimizer state for " + mine[i].first);
    m[i] = em->values;
    v[i] = ev->values;
  }
  adam_.set_step_count(std::stoll(*step));
  rng_.restore(*rng_state);
  return std::stoi(*next);
}

std::string dataset_subject(const std::vector<OccupancyGrid>& dataset, std::size_t i) {
  const std::string& label = dataset.at(i).label();
  return label.empty() ? "grid" + std::to_string(i) : label;
}

TrainResult run_two_stage(const TrainConfig& config, const std::vector<OccupancyGrid>& dataset,
                          const GuidanceOracle& oracle, const TrainHooks& hooks,
                          const std::optional<std::filesystem::path>& resume_from) {
  config.validate();
  if (dataset.empty()) throw TrainError("EmptyDataset");
  if (config.stage1_index < 0 || config.stage1_index >= static_cast<int>(dataset.size()))
    throw TrainError("BadStageIndex: " + std::to_string(config.stage1_index) + " not in [0, " +
                     std::to_string(dataset.size()) + ")");
  for (const auto& g : dataset)
    if (g.dims() != Dims::cube(config.model.k))
      throw DimMismatch("DimMismatch: dataset grid is not " + std::to_string(config.model.k) + "^3");

  Trainer trainer(config, build_detailizer(config.model));
  TrainResult result;
  int start = 0;
  if (resume_from) {
    start = trainer.restore(nn::load_artc(*resume_from));
    const auto history_path = resume_from->parent_path() / "history.csv";
    if (std::filesystem::exists(history_path)) {
      for (const auto& r : TrainHistory::from_csv(read_file(history_path)).records)
        if (r.iter < start) result.history.records.push_back(r);
    }
  }

  auto save = [&](const std::string& name, int next_iter) {
    if (config.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(config.checkpoint_dir);
    const auto path = config.checkpoint_dir / name;
    nn::save_artc(trainer.checkpoint(next_iter), path);
    write_file(config.checkpoint_dir / "history.csv", result.history.to_csv());
    if (hooks.on_checkpoint) hooks.on_checkpoint(path);
  };

  const int total = config.total_iterations();
  const int n = static_cast<int>(dataset.size());
  for (int i = start; i < total; ++i) {
    if (hooks.should_stop && hooks.should_stop()) {
      result.stopped = true;
      save("stopped.artc", i);
      break;
    }
    const int stage = i < config.stage1_iterations ? 1 : 2;
    const int index = stage == 1 ? config.stage1_index : static_cast<int>(trainer.rng().uniform_int(0, n - 1));
    double lambda = 0.0;
    if (config.regularize)
      lambda = total == 1 ? config.lambda_start : lambda_schedule(i, total - 1, config.lambda_start, config.lambda_end);

    const auto t0 = std::chrono::steady_clock::now();
    const StepLosses losses = trainer.step(dataset[index], dataset_subject(dataset, index), oracle, lambda);
    TrainRecord rec;
    rec.iter = i;
    rec.stage = stage;
    rec.lambda = lambda;
    rec.l_sds = losses.l_sds;
    rec.l_reg = losses.l_reg;
    rec.l_total = losses.l_total;
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
    if (config.checkpoint_every > 0 && (i + 1) % config.checkpoint_every == 0 && i + 1 < total)
      save("ckpt_" + std::to_string(i + 1) + ".artc", i + 1);
  }
  if (!result.stopped) save("final.artc", total);
  result.model = trainer.model();
  return result;
}

std::vector<int> rank_stage1_candidates(const std::vector<OccupancyGrid>& dataset) {
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::pair<int, std::size_t>> key;
  for (const auto& g : dataset) key.emplace_back(connected_components(g), g.count());
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] < key[b]; });
  return order;
}

}  // namespace voxdet
