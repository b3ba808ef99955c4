// Command line front end. Every subcommand reads the flat config format:
// `--config FILE` supplies keys, `--set key=value` and the named flags
// override them.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "voxdet/augment.hpp"
#include "voxdet/binary_io.hpp"
#include "voxdet/camera.hpp"
#include "voxdet/checkpoint.hpp"
#include "voxdet/config.hpp"
#include "voxdet/detailizer.hpp"
#include "voxdet/eval.hpp"
#include "voxdet/meshio.hpp"
#include "voxdet/render.hpp"
#include "voxdet/service.hpp"
#include "voxdet/trainer.hpp"
#include "voxdet/voxelize.hpp"

using namespace voxdet;

namespace {

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::shared_ptr<std::string>>> flags;

  Command(CLI::App& parent, const std::string& name, const std::string& help) {
    app = parent.add_subcommand(name, help);
    app->add_option("-c,--config", config_path, "Flat config file (key = value)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key, key=value");
  }

  // A flag that writes config key `key`.
  CLI::Option* flag(const std::string& names, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    flags.emplace_back(key, value);
    return app->add_option(names, *value, help);
  }

  FlatConfig config() const {
    FlatConfig cfg = config_path.empty() ? FlatConfig{} : FlatConfig::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : flags)
      if (!value->empty()) cfg.set(key, *value);
    return cfg;
  }
};

std::string require(const FlatConfig& cfg, const std::string& key) {
  const std::string v = cfg.get(key, "");
  if (v.empty()) throw ConfigError("missing required key '" + key + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::string ends_lower(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

OccupancyGrid load_grid(const std::filesystem::path& path) {
  OccupancyGrid g = load_artv(path);
  if (g.label().empty()) g.set_label(path.stem().string());
  return g;
}

RenderOptions render_options(const FlatConfig& cfg) {
  RenderOptions r;
  r.samples = cfg.get_int("render.samples", r.samples);
  r.density_scale = cfg.get_double("render.density_scale", r.density_scale);
  return r;
}

int run_voxelize(const FlatConfig& cfg) {
  TriangleMesh mesh = load_obj(require(cfg, "input"));
  mesh.normalize();
  const auto result = voxelize_mesh(mesh, cfg.get_int("k", 32));
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  save_artv(result.grid, require(cfg, "output"));
  std::cout << "occupied " << result.grid.count() << " of " << result.grid.dims().count() << "\n";
  return 0;
}

int run_augment(const FlatConfig& cfg) {
  std::vector<OccupancyGrid> sources;
  for (const auto& p : split_list(require(cfg, "input"))) sources.push_back(load_grid(p));
  AugmentParams params;
  const auto smin = cfg.get_double_list("scale_min", {params.scale_min[0], params.scale_min[1], params.scale_min[2]});
  const auto smax = cfg.get_double_list("scale_max", {params.scale_max[0], params.scale_max[1], params.scale_max[2]});
  if (smin.size() != 3 || smax.size() != 3) throw ConfigError("scale_min and scale_max take three values");
  for (int a = 0; a < 3; ++a) {
    params.scale_min[a] = smin[a];
    params.scale_max[a] = smax[a];
  }
  params.quarter_turns = cfg.get_int_list("quarter_turns", params.quarter_turns);
  params.free_angle_deg = cfg.get_double("free_angle", params.free_angle_deg);
  params.merge_min = cfg.get_int("merge_min", params.merge_min);
  params.merge_max = cfg.get_int("merge_max", params.merge_max);
  params.seed = cfg.get_u64("seed", params.seed);
  params.validate();

  const std::filesystem::path output = require(cfg, "output");
  const int count = cfg.get_int("count", 1);
  if (count < 1) throw ConfigError("count must be >= 1");
  for (int i = 0; i < count; ++i) {
    AugmentParams p = params;
    p.seed = params.seed + static_cast<std::uint64_t>(i);
    const OccupancyGrid g = augment(sources, p);
    std::filesystem::path path = output;
    if (count > 1) path.replace_filename(output.stem().string() + "_" + std::to_string(i) + output.extension().string());
    save_artv(g, path);
    std::cout << path.string() << "\n";
  }
  return 0;
}

volatile std::sig_atomic_t g_interrupted = 0;

// Keys the train command consumes itself; the rest go to the trainer, which
// rejects anything it does not know.
bool cli_train_key(const std::string& key) {
  static const std::vector<std::string> own{"dataset", "output", "history", "resume", "log_every", "oracle"};
  for (const auto& k : own)
    if (key == k) return true;
  return key.rfind("oracle.", 0) == 0;
}

int run_train(const FlatConfig& cfg) {
  FlatConfig trainer_keys;
  for (const auto& [key, value] : cfg.values())
    if (!cli_train_key(key)) trainer_keys.set(key, value);
  const TrainConfig config = TrainConfig::from_flat(trainer_keys);
  config.validate();
  std::vector<OccupancyGrid> dataset;
  for (const auto& p : split_list(require(cfg, "dataset"))) dataset.push_back(load_grid(p));
  const auto oracle = make_oracle(cfg.get("oracle", "procedural_stylizer"), cfg.with_prefix("oracle"));

  const int log_every = std::max(1, cfg.get_int("log_every", 50));
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) {
    if (r.iter % log_every == 0 || r.iter + 1 == config.total_iterations())
      std::printf("iter %d stage %d lambda %.4g sds %.6f reg %.6f total %.6f ms %.1f\n", r.iter, r.stage, r.lambda,
                  r.l_sds, r.l_reg, r.l_total, r.ms);
  };
  hooks.on_checkpoint = [](const std::filesystem::path& p) { std::printf("checkpoint %s\n", p.string().c_str()); };
  hooks.should_stop = [] { return g_interrupted != 0; };
  std::signal(SIGINT, [](int) { g_interrupted = 1; });

  std::optional<std::filesystem::path> resume;
  if (cfg.has("resume")) resume = cfg.get("resume", "");
  const TrainResult result = run_two_stage(config, dataset, *oracle, hooks, resume);

  nn::CheckpointData data = to_checkpoint(result.model);
  data.config.emplace_back("train.prompt", config.prompt);
  save_artc(data, require(cfg, "output"));
  if (cfg.has("history")) write_file(cfg.get("history", ""), result.history.to_csv());
  if (result.stopped) {
    std::cout << "stopped after " << result.history.records.size() << " iterations\n";
    return 130;
  }
  return 0;
}

int run_detailize(const FlatConfig& cfg) {
  const DetailizerModel model = load_detailizer(require(cfg, "checkpoint"));
  const OccupancyGrid grid = load_grid(require(cfg, "input"));
  const double iso = cfg.get_double("iso", 30.0);

  nn::NoGradGuard no_grad;
  const auto t0 = std::chrono::steady_clock::now();
  const DetailizedShape shape = detailize(model, grid);
  TriangleMesh mesh = marching_cubes(shape.density, iso);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  mesh = color_vertices(std::move(mesh), shape.albedo);

  if (cfg.has("output")) {
    const std::filesystem::path out = cfg.get("output", "");
    if (ends_lower(out) == ".obj")
      export_obj(mesh, out);
    else
      export_ply(mesh, out);
  }
  std::printf("elapsed_ms %.3f\nvertices %zu\ntriangles %zu\n", ms, mesh.vertices.size(), mesh.triangles.size());
  return 0;
}

int run_render(const FlatConfig& cfg) {
  const DetailizerModel model = load_detailizer(require(cfg, "checkpoint"));
  const OccupancyGrid grid = load_grid(require(cfg, "input"));
  const int size = cfg.get_int("size", 256);
  const Camera cam = orbit_camera(cfg.get_double("azimuth", 30.0), cfg.get_double("elevation", 20.0),
                                  cfg.get_double("radius", 2.0), cfg.get_double("fov", 50.0), size, size);
  nn::NoGradGuard no_grad;
  const DetailizedShape shape = detailize(model, grid);
  save_view_png(render(shape.density, shape.albedo, cam, render_options(cfg)), require(cfg, "output"));
  return 0;
}

int run_eval(const FlatConfig& cfg) {
  const DetailizerModel model = load_detailizer(require(cfg, "checkpoint"));
  EvalProtocol protocol;
  protocol.image_size = cfg.get_int("image_size", protocol.image_size);
  protocol.fid_views = cfg.get_int("fid_views", protocol.fid_views);
  protocol.clip_views = cfg.get_int("clip_views", protocol.clip_views);
  protocol.threshold = cfg.get_double("threshold", protocol.threshold);
  protocol.render = render_options(cfg);
  const std::string prompt = cfg.get("prompt", "a detailed object");

  std::vector<BatchRow> rows;
  nn::NoGradGuard no_grad;
  for (const auto& p : split_list(require(cfg, "input"))) {
    const OccupancyGrid grid = load_grid(p);
    rows.push_back({prompt, grid.label(), eval_protocol(detailize(model, grid), grid, prompt, protocol)});
  }
  const std::string csv = metrics_csv(rows);
  if (cfg.has("output"))
    write_file(cfg.get("output", ""), csv);
  else
    std::cout << csv;
  if (cfg.has("json") && rows.size() == 1) write_file(cfg.get("json", ""), rows.front().report.to_json());
  return 0;
}

Service* g_service = nullptr;

int run_serve(const FlatConfig& cfg) {
  ServiceOptions opts = ServiceOptions::from_env();
  opts.host = cfg.get("host", opts.host);
  opts.port = cfg.get_int("port", opts.port);
  opts.checkpoint_dir = cfg.get("checkpoint_dir", opts.checkpoint_dir.string());
  Service service(opts);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::cout << "listening on " << opts.host << ":" << opts.port << ", checkpoints in " << opts.checkpoint_dir.string()
            << std::endl;
  const bool ok = service.listen();
  g_service = nullptr;
  if (!ok) {
    std::cerr << "could not bind " << opts.host << ":" << opts.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voxel detailizer: coarse occupancy grids to detailed colored shapes"};
  app.require_subcommand(1);

  Command voxelize(app, "voxelize", "Solid-voxelize an OBJ mesh into an ARTV grid");
  voxelize.flag("-i,--input", "input", "OBJ mesh");
  voxelize.flag("-o,--output", "output", "ARTV grid");
  voxelize.flag("-k,--resolution", "k", "Grid edge (default 32)");

  Command aug(app, "augment", "Scale, rotate and merge ARTV grids");
  aug.flag("-i,--input", "input", "Comma separated ARTV grids");
  aug.flag("-o,--output", "output", "ARTV output; numbered when count > 1");
  aug.flag("-n,--count", "count", "Number of samples");
  aug.flag("--seed", "seed", "Seed");

  Command train(app, "train", "Two-stage training against a guidance oracle");
  train.flag("-d,--dataset", "dataset", "Comma separated ARTV grids");
  train.flag("-o,--output", "output", "ARTC checkpoint written at the end");
  train.flag("--history", "history", "CSV of per-iteration losses");
  train.flag("--resume", "resume", "ARTC checkpoint to resume from");
  train.flag("--prompt", "prompt", "Style prompt");
  train.flag("--seed", "seed", "Seed");

  Command det(app, "detailize", "Detailize a grid and extract a colored mesh");
  det.flag("-m,--checkpoint", "checkpoint", "ARTC checkpoint");
  det.flag("-i,--input", "input", "ARTV grid");
  det.flag("-o,--output", "output", "PLY or OBJ mesh");
  det.flag("--iso", "iso", "Density iso level (default 30)");

  Command ren(app, "render", "Render a detailized grid to PNG");
  ren.flag("-m,--checkpoint", "checkpoint", "ARTC checkpoint");
  ren.flag("-i,--input", "input", "ARTV grid");
  ren.flag("-o,--output", "output", "PNG image");
  ren.flag("--azimuth", "azimuth", "Degrees");
  ren.flag("--elevation", "elevation", "Degrees");
  ren.flag("--size", "size", "Image edge in pixels");

  Command ev(app, "eval", "IoU, CLIP and FID metrics for detailized grids");
  ev.flag("-m,--checkpoint", "checkpoint", "ARTC checkpoint");
  ev.flag("-i,--input", "input", "Comma separated ARTV grids");
  ev.flag("-o,--output", "output", "Metrics CSV (stdout when absent)");
  ev.flag("--json", "json", "JSON report for a single grid");
  ev.flag("--prompt", "prompt", "Prompt scored by the CLIP metric");

  Command serve(app, "serve", "HTTP API");
  serve.flag("--host", "host", "Bind address");
  serve.flag("--port", "port", "Port");
  serve.flag("--checkpoint-dir", "checkpoint_dir", "Checkpoint store directory");

  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<Command*, int (*)(const FlatConfig&)>> commands{
      {&voxelize, run_voxelize}, {&aug, run_augment}, {&train, run_train}, {&det, run_detailize},
      {&ren, run_render},        {&ev, run_eval},     {&serve, run_serve}};
  try {
    for (const auto& [cmd, run] : commands)
      if (cmd->app->parsed()) return run(cmd->config());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
