// Acceptance gate: one PASS/FAIL line per criterion. With arguments, only
// the listed criteria run (e.g. `acceptance 1 9 10`).

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unistd.h>

#include "gradcheck.hpp"
#include "naive_conv.hpp"
#include "naive_nn.hpp"
#include "render/render_gradcheck.hpp"
#include "support.hpp"
#include "toy_task.hpp"
#include "voxdet/conv.hpp"
#include "voxdet/meshio.hpp"
#include "voxdet/parallel.hpp"

using namespace voxdet;
using nn::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool bits_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

// Pushes the last density bias into [lo, hi] so that every threshold is crossed somewhere.
void bias_density_output(DetailizerModel& model, Rng& rng, double lo, double hi) {
  auto named = model.named_parameters();
  for (auto it = named.rbegin(); it != named.rend(); ++it)
    if (it->first.rfind("density.", 0) == 0 && it->first.ends_with(".bias")) {
      for (float& b : it->second.data()) b = static_cast<float>(rng.uniform(lo, hi));
      return;
    }
}

Outcome renderer_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = testing::render_gradient_suite(2025, 200, 8, 64);
  const double secs = seconds_since(t0);
  return {r.probed == 200 && r.pass_fraction() >= 0.95 && secs < 60.0,
          fmt("%d/%d probes within 1e-3 (need 95%%), worst %.2e, %.1f s (limit 60)", r.passed, r.probed, r.worst,
              secs)};
}

Outcome network_gradients() {
  Rng rng(31);
  constexpr int probes = 30;
  std::string detail;
  bool ok = true;
  auto record = [&](const std::string& name, const testing::GradCheck& r) {
    ok = ok && r.probed == probes && r.passed == r.probed;
    detail += fmt("%s %d/%d (worst %.1e); ", name.c_str(), r.passed, r.probed, r.worst);
  };

  auto x = testing::random_tensor(rng, {1, 2, 5, 4, 5}, true);
  auto w = testing::random_tensor(rng, {3, 2, 3, 3, 3}, true);
  auto b = testing::random_tensor(rng, {3}, true);
  record("conv3d", testing::check_gradients([&] { return nn::conv3d(x, w, b, 1, 1); }, {x, w, b}, probes, rng,
                                            [&](const std::vector<float>& wv) {
                                              return testing::project(testing::naive_conv(x, w, b, 1, 1), wv);
                                            }));
  auto xt = testing::random_tensor(rng, {1, 3, 3, 4, 3}, true);
  auto wt = testing::random_tensor(rng, {3, 2, 4, 4, 4}, true);
  auto bt = testing::random_tensor(rng, {2}, true);
  record("conv_transpose3d",
         testing::check_gradients([&] { return nn::conv_transpose3d(xt, wt, bt, 2, 1); }, {xt, wt, bt}, probes, rng,
                                  [&](const std::vector<float>& wv) {
                                    return testing::project(testing::naive_conv_transpose(xt, wt, bt, 2, 1), wv);
                                  }));
  auto a = testing::random_tensor(rng, {2, 3, 4}, true, -3.0, 3.0);
  record("softplus", testing::check_gradients([&] { return nn::softplus(a); }, {a}, probes, rng));
  record("sigmoid", testing::check_gradients([&] { return nn::sigmoid(a); }, {a}, probes, rng));

  DetailizerConfig c;
  c.k = 4;
  c.K = 16;
  c.conv_channels = {4, 6, 6, 6, 6};
  c.up_channels = {4};
  c.seed = 77;
  const auto model = build_detailizer(c);
  const auto coarse = testing::random_grid(rng, Dims::cube(4), 0.4);
  auto f = [&] {
    const auto s = detailize(model, coarse);
    return nn::add(nn::sum(nn::mul(s.density, Tensor::full(s.density.shape(), 0.37f))),
                   nn::sum(nn::mul(s.albedo, Tensor::full(s.albedo.shape(), -0.61f))));
  };
  testing::KinkTracker kinks;
  auto reference = [&](const std::vector<float>& wv) {
    const auto s = testing::naive_detailize(model, coarse, kinks.next());
    double acc = 0.0;
    for (double d : s.density) acc += static_cast<double>(0.37f) * d;
    for (double v : s.albedo) acc += static_cast<double>(-0.61f) * v;
    return acc * wv[0];
  };
  record("detailizer 4^3->16^3", testing::check_gradients(f, model.parameters(), probes, rng, reference, 1e-3, 1e-3,
                                                          [&] { return kinks.straddled(); }));
  return {ok, detail + "rel. err < 1e-3 required on every probe"};
}

Outcome confinement() {
  Rng rng(1234);
  const std::vector<double> thresholds{1.0, 30.0, 100.0};
  long density_violations = 0, subset_violations = 0, crossed = 0;
  for (int pair = 0; pair < 100; ++pair) {
    DetailizerConfig c;
    c.k = 8;
    c.K = 32;
    c.conv_channels = {4, 6, 6, 6, 6};
    c.up_channels = {4};
    c.seed = 5000 + static_cast<std::uint64_t>(pair);
    auto model = build_detailizer(c);
    bias_density_output(model, rng, -20.0, 150.0);
    const auto coarse = testing::random_grid(rng, Dims::cube(8), rng.uniform(0.01, 0.3));
    const auto allowed = testing::brute_force_dilate(coarse, 1);
    nn::NoGradGuard no_grad;
    const auto out = detailize(model, coarse);
    const auto d = out.density.data();
    for (int z = 0; z < 32; ++z)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (!allowed.at(x / 4, y / 4, z / 4) && d[(static_cast<std::size_t>(z) * 32 + y) * 32 + x] != 0.0f)
            ++density_violations;
    for (double th : thresholds) {
      const auto v = voxelize_density(out.density, th, 8);
      crossed += v.count() > 0;
      subset_violations += !v.subset_of(allowed);
    }
  }
  return {density_violations == 0 && subset_violations == 0 && crossed > 0,
          fmt("100 pairs: %ld nonzero cells outside the mask, %ld voxelizations outside dilate(input,1) over "
              "thresholds {1,30,100}; %ld of 300 voxelizations nonempty",
              density_violations, subset_violations, crossed)};
}

OccupancyGrid grid_from_bits(int bits) {
  OccupancyGrid g(Dims::cube(2));
  for (int i = 0; i < 8; ++i)
    if (bits >> i & 1) g.set(i & 1, i >> 1 & 1, i >> 2 & 1);
  return g;
}

Outcome iou_oracle() {
  long mismatches = 0, pairs = 0;
  for (int p = 0; p < 256; ++p)
    for (int q = 0; q < 256; ++q) {
      ++pairs;
      const auto v = grid_from_bits(p), w = grid_from_bits(q);
      const int inter = std::popcount(static_cast<unsigned>(p & q));
      const int uni = std::popcount(static_cast<unsigned>(p | q));
      const int nv = std::popcount(static_cast<unsigned>(p));
      mismatches += strict_iou(v, w) != (uni == 0 ? 1.0 : static_cast<double>(inter) / uni);
      if (nv > 0) {
        mismatches += loose_iou(v, w) != static_cast<double>(inter) / nv;
      } else {
        try {
          loose_iou(v, w);
          ++mismatches;  // an empty reference must be rejected
        } catch (const EvalError&) {
        }
      }
    }
  Rng rng(404);
  int ordered = 0;
  for (int i = 0; i < 100; ++i) {
    auto v = testing::random_grid(rng, Dims::cube(4), rng.uniform(0.1, 0.7));
    if (v.empty()) v.set(0, 0, 0);
    const auto w = testing::random_grid(rng, Dims::cube(4), rng.uniform(0.1, 0.7));
    ordered += loose_iou(v, w) >= strict_iou(v, w);
  }
  return {mismatches == 0 && ordered == 100,
          fmt("%ld/%ld 2^3 pairs mismatched the cell-count oracle; loose >= strict on %d/100 random 4^3 pairs",
              mismatches, pairs, ordered)};
}

Outcome lambda_endpoints() {
  const int last = 999;  // iterations 0..999 of a 300+700 run
  const double first_v = lambda_schedule(0, last, 1e4, 10.0);
  const double last_v = lambda_schedule(last, last, 1e4, 10.0);
  int increases = 0;
  double prev = first_v;
  for (int i = 1; i <= last; ++i) {
    const double v = lambda_schedule(i, last, 1e4, 10.0);
    increases += v > prev;
    prev = v;
  }
  return {first_v == 1e4 && last_v == 10.0 && increases == 0,
          fmt("lambda(0) = %.17g, lambda(999) = %.17g, %d increases over 1000 iterations", first_v, last_v,
              increases)};
}

// The toy runs are shared between the distillation and ablation criteria.
struct ToyRun {
  double initial_mse = 0.0, final_mse = 0.0, loose = 0.0, seconds = 0.0;
};

ToyRun toy_run(const testing::ToyTask& task, std::uint64_t seed, bool regularize) {
  const auto config = testing::toy_config(seed, regularize);
  ToyRun run;
  run.initial_mse = testing::toy_render_mse(build_detailizer(config.model), task, config);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_two_stage(config, task.dataset, task.oracle);
  run.seconds = seconds_since(t0);
  run.final_mse = testing::toy_render_mse(result.model, task, config);
  run.loose = testing::toy_loose_iou(result.model, task);
  std::printf("  toy run seed %llu %s: mse %.5f -> %.5f, loose %.3f, %.0f s\n", static_cast<unsigned long long>(seed),
              regularize ? "lambda schedule" : "lambda = 0", run.initial_mse, run.final_mse, run.loose, run.seconds);
  std::fflush(stdout);
  return run;
}

struct ToyRuns {
  testing::ToyTask task = testing::make_toy_task();
  std::map<std::pair<std::uint64_t, bool>, ToyRun> runs;
  const ToyRun& get(std::uint64_t seed, bool reg) {
    auto it = runs.find({seed, reg});
    if (it == runs.end()) it = runs.emplace(std::make_pair(seed, reg), toy_run(task, seed, reg)).first;
    return it->second;
  }
};

Outcome toy_distillation(ToyRuns& toy) {
  const auto& r = toy.get(1, true);
  const double ratio = r.final_mse / r.initial_mse;
  return {ratio <= 0.5 && r.loose >= 0.8 && r.seconds < 15 * 60,
          fmt("seed 1: render MSE %.5f -> %.5f (ratio %.3f, need <= 0.5), Loose-IoU %.3f (need >= 0.8), %.0f s "
              "(limit 900)",
              r.initial_mse, r.final_mse, ratio, r.loose, r.seconds)};
}

Outcome reg_ablation(ToyRuns& toy) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double with = toy.get(seed, true).loose, without = toy.get(seed, false).loose;
    wins += with > without;
    detail += fmt("seed %llu %.3f vs %.3f; ", static_cast<unsigned long long>(seed), with, without);
  }
  return {wins == 3, detail + fmt("schedule beats lambda = 0 on %d/3 seeds (Loose-IoU)", wins)};
}

double detailize_and_extract_ms(const DetailizerModel& model, const OccupancyGrid& coarse, int repeats) {
  nn::NoGradGuard no_grad;
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto shape = detailize(model, coarse);
    const auto mesh = marching_cubes(shape.density, 30.0);
    best = std::min(best, seconds_since(t0) * 1e3);
  }
  return best;
}

Outcome latency() {
  Rng rng(88);
  DetailizerConfig small;  // default channels, two doublings
  small.k = 16;
  small.K = 64;
  auto m16 = build_detailizer(small);
  bias_density_output(m16, rng, 40.0, 40.0);
  const auto g16 = testing::random_grid(rng, Dims::cube(16), 0.3);
  double ms16 = 0.0;
  {
    ReferenceMode single_threaded;
    ms16 = detailize_and_extract_ms(m16, g16, 3);
  }
  DetailizerConfig large;  // the default 32^3 -> 128^3 network
  auto m32 = build_detailizer(large);
  bias_density_output(m32, rng, 40.0, 40.0);
  const auto g32 = testing::random_grid(rng, Dims::cube(32), 0.3);
  const double ms32 = detailize_and_extract_ms(m32, g32, 2);
  return {ms16 < 1000.0 && ms32 < 5000.0,
          fmt("forward + marching cubes: 16^3->64^3 %.0f ms on 1 thread (limit 1000), 32^3->128^3 %.0f ms on %d "
              "thread(s) (limit 5000)",
              ms16, ms32, num_threads())};
}

Outcome frechet() {
  Rng rng(9);
  FeatureSet same(40, 8);
  for (int i = 0; i < same.size(); ++i) same.data()[i] = rng.normal();
  const double d_same = frechet_distance(same, same);

  // 1-D Gaussians: d = (m1 - m2)^2 + (s1 - s2)^2 with unbiased sample variances.
  FeatureSet a(5, 1), b(7, 1);
  for (int i = 0; i < a.rows(); ++i) a(i, 0) = 1.0 + 2.0 * rng.normal();
  for (int i = 0; i < b.rows(); ++i) b(i, 0) = -0.5 + 0.7 * rng.normal();
  auto stats = [](const FeatureSet& f) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < f.rows(); ++i) m += f(i, 0) / f.rows();
    for (int i = 0; i < f.rows(); ++i) v += (f(i, 0) - m) * (f(i, 0) - m) / (f.rows() - 1);
    return std::make_pair(m, v);
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  const double expect_1d = (ma - mb) * (ma - mb) + std::pow(std::sqrt(va) - std::sqrt(vb), 2);
  const double err_1d = std::abs(frechet_distance(a, b) - expect_1d);

  // Full factorial designs have exactly diagonal sample covariance.
  const std::vector<double> m1{0.0, 1.0, -2.0, 0.5}, s1{1.0, 0.5, 2.0, 0.1};
  const std::vector<double> m2{0.5, 1.0, 1.0, -0.5}, s2{2.0, 0.25, 2.0, 0.3};
  const int d = static_cast<int>(m1.size()), n = 1 << d;
  FeatureSet fa(n, d), fb(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) {
      fa(r, c) = m1[c] + ((r >> c & 1) ? s1[c] : -s1[c]);
      fb(r, c) = m2[c] + ((r >> c & 1) ? s2[c] : -s2[c]);
    }
  double expect_diag = 0.0;
  for (int c = 0; c < d; ++c) {
    const double v1 = s1[c] * s1[c] * n / (n - 1.0), v2 = s2[c] * s2[c] * n / (n - 1.0);
    expect_diag += (m1[c] - m2[c]) * (m1[c] - m2[c]) + std::pow(std::sqrt(v1) - std::sqrt(v2), 2);
  }
  const double err_diag = std::abs(frechet_distance(fa, fb) - expect_diag);
  return {d_same < 1e-6 && err_1d < 1e-4 && err_diag < 1e-4,
          fmt("identical sets %.1e (limit 1e-6); 1-D error %.1e, diagonal error %.1e (limit 1e-4)", d_same, err_1d,
              err_diag)};
}

Outcome clip() {
  const EmbeddingVector e{{0.3, -1.2, 2.5, 0.7}, EmbeddingVector::Source::Text};
  const EmbeddingVector same{{0.3, -1.2, 2.5, 0.7}};
  const EmbeddingVector orth{{1.2, 0.3, 0.0, 0.0}};  // dot = 0.36 - 0.36 = 0
  const EmbeddingVector opp{{-0.3, 1.2, -2.5, -0.7}};
  const double s_same = clip_score(e, same), s_orth = clip_score(e, orth), s_opp = clip_score(e, opp);
  return {s_same == 100.0 && s_orth == 0.0 && s_opp == 0.0,
          fmt("identical %.17g, orthogonal %.17g, opposite %.17g (exact 100 / 0 / 0)", s_same, s_orth, s_opp)};
}

Outcome determinism() {
  ReferenceMode reference;
  auto task = testing::make_toy_task();
  auto config = testing::toy_config(5, true);
  config.stage1_iterations = 15;
  config.stage2_iterations = 25;
  const auto a = run_two_stage(config, task.dataset, task.oracle);
  const auto b = run_two_stage(config, task.dataset, task.oracle);
  const bool same_history = a.history.same_losses(b.history) && a.history.records.size() == 40;
  bool same_params = true;
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) same_params = same_params && bits_equal(pa[i].data(), pb[i].data());

  const auto path = std::filesystem::temp_directory_path() / ("voxdet_accept_" + std::to_string(::getpid()) + ".artc");
  save_detailizer(a.model, path);
  const auto loaded = load_detailizer(path);
  std::filesystem::remove(path);
  bool same_forward = true;
  Rng rng(6);
  nn::NoGradGuard no_grad;
  for (int i = 0; i < 5; ++i) {
    const auto g = testing::random_grid(rng, Dims::cube(8), rng.uniform(0.05, 0.4));
    const auto x = detailize(a.model, g), y = detailize(loaded, g);
    same_forward = same_forward && bits_equal(x.density.data(), y.density.data()) &&
                   bits_equal(x.albedo.data(), y.albedo.data());
  }
  return {same_history && same_params && same_forward,
          fmt("two 15+25 iteration runs: history %s, parameters %s; checkpoint round trip forward %s on 5 grids",
              same_history ? "bit-identical" : "DIFFERENT", same_params ? "bit-identical" : "DIFFERENT",
              same_forward ? "bit-identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  ToyRuns toy;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"renderer gradient suite", renderer_gradients},
      {"network gradient suite", network_gradients},
      {"structure confinement", confinement},
      {"IoU oracle equivalence", iou_oracle},
      {"lambda schedule endpoints", lambda_endpoints},
      {"toy two-stage distillation", [&] { return toy_distillation(toy); }},
      {"regularization ablation ordering", [&] { return reg_ablation(toy); }},
      {"inference latency", latency},
      {"Frechet distance", frechet},
      {"CLIP score formula", clip},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  criterion %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
