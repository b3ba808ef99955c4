#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "voxdet/binary_io.hpp"
#include "voxdet/ops.hpp"
#include "voxdet/trainer.hpp"

using namespace voxdet;
using nn::Tensor;

namespace {

TrainConfig tiny_config(int stage1 = 4, int stage2 = 4) {
  TrainConfig c;
  c.stage1_iterations = stage1;
  c.stage2_iterations = stage2;
  c.lr = 1e-2;
  c.camera.width = c.camera.height = 16;
  c.render.samples = 24;
  c.model.k = 4;
  c.model.K = 16;
  c.model.conv_channels = {3, 4, 4, 4, 4};
  c.model.up_channels = {3};
  c.model.seed = 9;
  c.seed = 21;
  return c;
}

OccupancyGrid block(int k, int lo, int hi, const std::string& label = {}) {
  OccupancyGrid g(Dims::cube(k), label);
  for (int z = lo; z < hi; ++z)
    for (int y = lo; y < hi; ++y)
      for (int x = lo; x < hi; ++x) g.set(x, y, z);
  return g;
}

// Ball of radius r (fine voxels) at the grid center, with a fixed color.
ReferenceShape ball(int K, double r, float density) {
  ReferenceShape s{Tensor::zeros({K, K, K}), Tensor::zeros({3, K, K, K})};
  const std::size_t plane = static_cast<std::size_t>(K) * K * K;
  for (int z = 0; z < K; ++z)
    for (int y = 0; y < K; ++y)
      for (int x = 0; x < K; ++x) {
        const double dx = x + 0.5 - K / 2.0, dy = y + 0.5 - K / 2.0, dz = z + 0.5 - K / 2.0;
        const std::size_t i = (static_cast<std::size_t>(z) * K + y) * K + x;
        if (dx * dx + dy * dy + dz * dz < r * r) s.density.data()[i] = density;
        s.albedo.data()[i] = 0.8f;
        s.albedo.data()[plane + i] = 0.3f;
        s.albedo.data()[2 * plane + i] = 0.1f;
      }
  return s;
}

std::vector<std::vector<float>> snapshot(const DetailizerModel& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("voxdet_train_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::vector<OccupancyGrid> tiny_dataset() { return {block(4, 1, 3, "small"), block(4, 0, 4, "big")}; }

TargetMatchOracle tiny_oracle() {
  TargetMatchOracle o;
  o.add("small", ball(16, 4.0, 60.0f));
  o.add("big", ball(16, 7.0, 60.0f));
  return o;
}

}  // namespace

TEST_CASE("lambda schedule endpoints, midpoint and monotonicity") {
  CHECK(lambda_schedule(0, 999, 1e4, 10.0) == 1e4);
  CHECK(lambda_schedule(999, 999, 1e4, 10.0) == 10.0);
  CHECK(lambda_schedule(500, 1000, 1e4, 10.0) == doctest::Approx(std::sqrt(1e4 * 10.0)).epsilon(1e-12));
  CHECK(lambda_schedule(500, 1000, 1e4, 10.0) == doctest::Approx(316.227766).epsilon(1e-8));
  double prev = lambda_schedule(0, 999, 1e4, 10.0);
  for (int i = 1; i <= 999; ++i) {
    const double v = lambda_schedule(i, 999, 1e4, 10.0);
    CHECK(v <= prev);
    CHECK(v >= 10.0);
    prev = v;
  }
  CHECK(lambda_schedule(3, 7, 5.0, 5.0) == 5.0);
  CHECK_THROWS_AS(lambda_schedule(-1, 10, 1e4, 10.0), TrainError);
  CHECK_THROWS_AS(lambda_schedule(11, 10, 1e4, 10.0), TrainError);
  CHECK_THROWS_AS(lambda_schedule(0, 0, 1e4, 10.0), TrainError);
  CHECK_THROWS_AS(lambda_schedule(0, 10, 10.0, 1e4), TrainError);
  CHECK_THROWS_AS(lambda_schedule(0, 10, 1e4, 0.0), TrainError);
}

TEST_CASE("sampled cameras are 90 degrees apart at one elevation") {
  const auto config = tiny_config();
  Rng a(5), b(5), c(6);
  const auto cams = sample_cameras(a, config);
  REQUIRE(cams.size() == 4);
  CHECK(cams[0].azimuth_deg >= 0.0);
  CHECK(cams[0].azimuth_deg < 90.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(cams[i].azimuth_deg == doctest::Approx(cams[0].azimuth_deg + 90.0 * i));
    CHECK(cams[i].elevation_deg == cams[0].elevation_deg);
    CHECK(cams[i].radius == config.camera.radius);
    CHECK(cams[i].fov_deg == config.camera.fov_deg);
  }
  CHECK(cams[0].elevation_deg >= 0.0);
  CHECK(cams[0].elevation_deg <= 30.0);
  CHECK(sample_cameras(b, config)[0].position == cams[0].position);
  CHECK(sample_cameras(c, config)[0].azimuth_deg != cams[0].azimuth_deg);
}

TEST_CASE("null guidance with zero lambda leaves parameters bit-identical") {
  const auto config = tiny_config();
  Trainer trainer(config, build_detailizer(config.model));
  const auto before = snapshot(trainer.model());
  const NullGuidance null;
  for (int i = 0; i < 3; ++i) {
    const auto l = trainer.step(block(4, 1, 3), "", null, 0.0);
    CHECK(l.l_sds == 0.0);
    CHECK(l.l_reg > 0.0);
  }
  CHECK(snapshot(trainer.model()) == before);
  for (const auto& p : trainer.model().parameters())
    for (float g : std::as_const(p).grad()) CHECK(g == 0.0f);
}

TEST_CASE("target matching decreases the loss") {
  auto config = tiny_config();
  config.camera.elevation_min_deg = config.camera.elevation_max_deg = 15.0;
  // Eight views spaced evenly make the loss nearly independent of the
  // sampled base azimuth, so consecutive losses compare the parameters.
  config.views = 8;
  config.lr = 1e-3;
  Trainer trainer(config, build_detailizer(config.model));
  const auto oracle = tiny_oracle();
  std::vector<double> losses;
  for (int i = 0; i < 51; ++i) losses.push_back(trainer.step(block(4, 0, 4), "big", oracle, 0.0).l_total);
  int decreasing = 0;
  for (int i = 0; i < 50; ++i) decreasing += losses[i + 1] < losses[i];
  MESSAGE("decreasing pairs: " << decreasing << "/50, loss " << losses.front() << " -> " << losses.back());
  CHECK(decreasing >= 40);
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("silhouette term with empty references removes density") {
  auto config = tiny_config();
  auto model = build_detailizer(config.model);
  // Make the output opaque: large density bias on the last layer.
  auto named = model.named_parameters();
  for (auto it = named.rbegin(); it != named.rend(); ++it)
    if (it->first.rfind("density.", 0) == 0 && it->first.ends_with(".bias")) {
      for (float& b : it->second.data()) b = 40.0f;
      break;
    }
  Trainer trainer(config, model);
  const auto coarse = block(4, 1, 3);
  auto mass = [&] {
    nn::NoGradGuard g;
    double m = 0.0;
    for (float d : detailize(trainer.model(), coarse).density.data()) m += d;
    return m;
  };
  const double before = mass();
  Rng rng(3);
  const auto cams = sample_cameras(rng, config);
  const auto shape = detailize(trainer.model(), coarse);
  std::vector<Tensor> alphas;
  std::vector<MaskImage> empty;
  for (const auto& cam : cams) {
    const auto v = render(shape.density, shape.albedo, cam, config.render);
    alphas.push_back(v.alpha);
    empty.emplace_back(cam.width, cam.height, 1, 0.0f);
  }
  CHECK(alphas.front().data()[8 * 16 + 8] > 0.9f);
  const Tensor loss = total_loss(Tensor::scalar(0.0f), reg_loss(alphas, empty), 1e4);
  nn::backward(loss);
  auto params = trainer.optimizer().params();
  nn::clip_grad_norm(params, config.clip_norm);
  trainer.optimizer().step();
  CHECK(mass() < before);
}

TEST_CASE("run_two_stage argument errors") {
  const auto oracle = tiny_oracle();
  CHECK_THROWS_WITH_AS(run_two_stage(tiny_config(), {}, oracle), "EmptyDataset", TrainError);
  auto config = tiny_config();
  config.stage1_index = 2;
  CHECK_THROWS_AS(run_two_stage(config, tiny_dataset(), oracle), TrainError);
  config.stage1_index = -1;
  CHECK_THROWS_AS(run_two_stage(config, tiny_dataset(), oracle), TrainError);
  CHECK_THROWS_AS(run_two_stage(tiny_config(), {block(8, 2, 5)}, oracle), DimMismatch);
  config = tiny_config();
  config.views = 0;
  CHECK_THROWS_AS(run_two_stage(config, tiny_dataset(), oracle), InvalidConfig);
}

TEST_CASE("history records, lambda and stage labels") {
  const auto result = run_two_stage(tiny_config(3, 5), tiny_dataset(), tiny_oracle());
  const auto& r = result.history.records;
  REQUIRE(r.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(r[i].iter == i);
    CHECK(r[i].stage == (i < 3 ? 1 : 2));
    CHECK(r[i].lambda == lambda_schedule(i, 7, 1e4, 10.0));
    CHECK(r[i].l_total == doctest::Approx(r[i].l_sds + r[i].lambda * r[i].l_reg).epsilon(1e-5));
  }
  CHECK(r.front().lambda == 1e4);
  CHECK(r.back().lambda == 10.0);

  auto config = tiny_config(2, 2);
  config.regularize = false;
  for (const auto& rec : run_two_stage(config, tiny_dataset(), tiny_oracle()).history.records) CHECK(rec.lambda == 0.0);
}

TEST_CASE("stage-1-only run equals a manual training loop") {
  const auto config = tiny_config(5, 0);
  const auto dataset = tiny_dataset();
  const auto oracle = tiny_oracle();
  const auto result = run_two_stage(config, dataset, oracle);

  Trainer trainer(config, build_detailizer(config.model));
  for (int i = 0; i < 5; ++i) {
    const auto l = trainer.step(dataset[0], "small", oracle, lambda_schedule(i, 4, 1e4, 10.0));
    CHECK(l.l_total == result.history.records[i].l_total);
  }
  CHECK(snapshot(trainer.model()) == snapshot(result.model));
}

TEST_CASE("fixed seeds reproduce history and parameters bit-exactly") {
  const auto a = run_two_stage(tiny_config(), tiny_dataset(), tiny_oracle());
  const auto b = run_two_stage(tiny_config(), tiny_dataset(), tiny_oracle());
  CHECK(a.history.same_losses(b.history));
  CHECK(snapshot(a.model) == snapshot(b.model));
  auto other = tiny_config();
  other.seed = 22;
  CHECK_FALSE(run_two_stage(other, tiny_dataset(), tiny_oracle()).history.same_losses(a.history));
}

TEST_CASE("resume from a checkpoint continues bit-exactly") {
  auto config = tiny_config(3, 5);
  config.checkpoint_every = 4;
  config.checkpoint_dir = temp_dir("full");
  const auto full = run_two_stage(config, tiny_dataset(), tiny_oracle());
  CHECK(std::filesystem::exists(config.checkpoint_dir / "ckpt_4.artc"));
  CHECK(std::filesystem::exists(config.checkpoint_dir / "final.artc"));
  CHECK(TrainHistory::from_csv(read_file(config.checkpoint_dir / "history.csv")).same_losses(full.history));

  // Resume in a fresh directory holding only the checkpoint and its history.
  auto resumed_cfg = config;
  resumed_cfg.checkpoint_dir = temp_dir("resumed");
  std::filesystem::create_directories(resumed_cfg.checkpoint_dir);
  std::filesystem::copy_file(config.checkpoint_dir / "ckpt_4.artc", resumed_cfg.checkpoint_dir / "ckpt_4.artc");
  std::filesystem::copy_file(config.checkpoint_dir / "history.csv", resumed_cfg.checkpoint_dir / "history.csv");
  const auto resumed =
      run_two_stage(resumed_cfg, tiny_dataset(), tiny_oracle(), {}, resumed_cfg.checkpoint_dir / "ckpt_4.artc");
  CHECK(resumed.history.same_losses(full.history));
  CHECK(snapshot(resumed.model) == snapshot(full.model));
  std::filesystem::remove_all(config.checkpoint_dir);
  std::filesystem::remove_all(resumed_cfg.checkpoint_dir);
}

TEST_CASE("stopping writes a resumable checkpoint") {
  auto config = tiny_config(3, 3);
  config.checkpoint_dir = temp_dir("stop");
  const auto full = run_two_stage(tiny_config(3, 3), tiny_dataset(), tiny_oracle());
  int seen = 0;
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord&) { ++seen; };
  hooks.should_stop = [&] { return seen == 3; };
  const auto stopped = run_two_stage(config, tiny_dataset(), tiny_oracle(), hooks);
  CHECK(stopped.stopped);
  CHECK(stopped.history.records.size() == 3);
  const auto path = config.checkpoint_dir / "stopped.artc";
  REQUIRE(std::filesystem::exists(path));
  // The stage-2 continuation starts from the stage-1 parameters.
  const auto rest = run_two_stage(config, tiny_dataset(), tiny_oracle(), {}, path);
  CHECK_FALSE(rest.stopped);
  CHECK(rest.history.same_losses(full.history));
  CHECK(snapshot(rest.model) == snapshot(full.model));
  std::filesystem::remove_all(config.checkpoint_dir);
}

TEST_CASE("restore rejects non-training and mismatched checkpoints") {
  const auto config = tiny_config();
  Trainer trainer(config, build_detailizer(config.model));
  CHECK_THROWS_AS(trainer.restore(to_checkpoint(build_detailizer(config.model))), nn::CorruptCheckpoint);
  auto other = config;
  other.model.conv_channels = {3, 4, 4, 4, 5};
  Trainer different(other, build_detailizer(other.model));
  CHECK_THROWS_AS(trainer.restore(different.checkpoint(0)), TrainError);
}

TEST_CASE("history CSV round trip is exact") {
  TrainHistory h;
  h.records.push_back({0, 1, 1e4, 0.1 / 3.0, 1e-17, 1.0 / 7.0, 12.25});
  h.records.push_back({1, 2, 316.22776601683796, 2e-300, 0.0, 5.5, 0.0});
  const auto back = TrainHistory::from_csv(h.to_csv());
  CHECK(back.same_losses(h));
  CHECK(back.records[0].ms == 12.25);
  CHECK(h.to_csv().rfind("iter,stage,lambda,l_sds,l_reg,l_total,ms\n", 0) == 0);
  CHECK_THROWS_AS(TrainHistory::from_csv("a,b\n1,2\n"), FormatError);
  CHECK_THROWS_AS(TrainHistory::from_csv("iter,stage,lambda,l_sds,l_reg,l_total,ms\n1,2,x\n"), FormatError);
}

TEST_CASE("train config from key-value text") {
  const auto cfg = FlatConfig::parse(
      "stage1_iterations = 10\nstage2_iterations = 20\nlambda_start = 500\nlambda_end = 5\n"
      "regularize = false\nimage_size = 24\nmodel.k = 4\nmodel.K = 16\nmodel.conv_channels = 2,3,3,3,3\n"
      "model.up_channels = 2\nrender.background = 0,0,0\noracle = target_match\ndataset = a.artv\n"
      "eval.threshold = 30\nseed = 77\n");
  const auto c = TrainConfig::from_flat(cfg);
  CHECK(c.stage1_iterations == 10);
  CHECK(c.total_iterations() == 30);
  CHECK(c.lambda_start == 500.0);
  CHECK_FALSE(c.regularize);
  CHECK(c.camera.width == 24);
  CHECK(c.camera.height == 24);
  CHECK(c.model.conv_channels == std::vector<int>{2, 3, 3, 3, 3});
  CHECK(c.render.background.isZero());
  CHECK(c.seed == 77);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(TrainConfig::from_flat(FlatConfig::parse("lamda_start = 5\n")), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_flat(FlatConfig::parse("views = many\n")), ConfigError);
  auto bad = c;
  bad.lambda_end = 1000.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
}

TEST_CASE("stage-1 candidates rank simple grids first") {
  OccupancyGrid two(Dims::cube(4), "two");
  two.set(0, 0, 0);
  two.set(3, 3, 3);
  const std::vector<OccupancyGrid> grids{block(4, 0, 4), two, block(4, 1, 3), block(4, 1, 2)};
  CHECK(rank_stage1_candidates(grids) == std::vector<int>{3, 2, 0, 1});
  CHECK(dataset_subject(grids, 1) == "two");
  CHECK(dataset_subject(grids, 0) == "grid0");
}
