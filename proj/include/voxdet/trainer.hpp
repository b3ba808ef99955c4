#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxdet/adam.hpp"
#include "voxdet/config.hpp"
#include "voxdet/detailizer.hpp"
#include "voxdet/guidance.hpp"
#include "voxdet/render.hpp"
#include "voxdet/rng.hpp"

namespace voxdet {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CameraDistribution {
  double radius = 2.0;
  double fov_deg = 50.0;
  double elevation_min_deg = 0.0;
  double elevation_max_deg = 30.0;
  int width = 64;
  int height = 64;
};

struct TrainConfig {
  int stage1_iterations = 300;
  int stage2_iterations = 700;
  int stage1_index = 0;
  int views = 4;
  double lambda_start = 1e4;
  double lambda_end = 10.0;
  // false trains with lambda = 0 throughout (the no-regularization ablation).
  bool regularize = true;
  double lr = 1e-4;
  double clip_norm = 1.0;
  double t_min = 0.02;
  double t_max = 0.98;
  CameraDistribution camera;
  RenderOptions render;
  DetailizerConfig model;
  std::string prompt = "a detailed object";
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  int total_iterations() const { return stage1_iterations + stage2_iterations; }
  // Throws InvalidConfig.
  void validate() const;

  // Recognized keys are listed in the README. Keys under "oracle.",
  // "dataset" and "eval." are left for the caller; any other unknown key
  // throws ConfigError.
  static TrainConfig from_flat(const FlatConfig& cfg);
};

struct TrainRecord {
  int iter = 0;
  int stage = 1;
  double lambda = 0.0;
  double l_sds = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
  double ms = 0.0;  // wall time of the step

  // Equality of everything but the wall time.
  bool same_losses(const TrainRecord& o) const;
};

struct TrainHistory {
  std::vector<TrainRecord> records;

  // Header: iter,stage,lambda,l_sds,l_reg,l_total,ms. Floats use %.17g so a
  // round trip is exact.
  std::string to_csv() const;
  static TrainHistory from_csv(std::string_view text);
  bool same_losses(const TrainHistory& o) const;
};

// exp(lerp(ln start, ln end, iter/total)), exact at both ends.
// Throws TrainError("InvalidRange") unless 0 <= iter <= total, total >= 1
// and start >= end > 0.
double lambda_schedule(int iter, int total, double lambda_start, double lambda_end);

// Base azimuth ~ U[0,90), views spread evenly around the orbit from it,
// one shared elevation ~ U[min,max].
std::vector<Camera> sample_cameras(Rng& rng, const TrainConfig& config);

struct StepLosses {
  double l_sds = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
};

// Model, optimizer and RNG of one training job.
class Trainer {
 public:
  Trainer(const TrainConfig& config, DetailizerModel model);

  // One render -> guidance -> loss -> backward -> clip -> Adam step.
  StepLosses step(const OccupancyGrid& coarse, const std::string& subject, const GuidanceOracle& oracle,
                  double lambda);

  DetailizerModel& model() { return model_; }
  const DetailizerModel& model() const { return model_; }
  nn::Adam& optimizer() { return adam_; }
  Rng& rng() { return rng_; }
  const TrainConfig& config() const { return config_; }

  // Model plus optimizer moments, RNG state and next iteration.
  nn::CheckpointData checkpoint(int next_iter) const;
  // Restores a checkpoint written by checkpoint(); returns the next iteration.
  int restore(const nn::CheckpointData& data);

 private:
  TrainConfig config_;
  DetailizerModel model_;
  nn::Adam adam_;
  Rng rng_;
};

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  std::function<void(const std::filesystem::path&)> on_checkpoint;
  // Polled between steps; true ends the run early (history kept so far).
  std::function<bool()> should_stop;
};

struct TrainResult {
  DetailizerModel model;
  TrainHistory history;
  bool stopped = false;
};

// Subject key used for dataset grid i: its label, or "grid<i>" if unlabeled.
std::string dataset_subject(const std::vector<OccupancyGrid>& dataset, std::size_t i);

// Stage 1 trains on dataset[stage1_index]; stage 2 draws grids uniformly.
// The lambda schedule spans both stages. With `resume_from` the run
// continues from that checkpoint and the history.csv beside it.
// Throws TrainError("EmptyDataset") / ("BadStageIndex").
TrainResult run_two_stage(const TrainConfig& config, const std::vector<OccupancyGrid>& dataset,
                          const GuidanceOracle& oracle, const TrainHooks& hooks = {},
                          const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Dataset indices ordered from simplest (fewest components, then fewest
// occupied cells) to most complex.
std::vector<int> rank_stage1_candidates(const std::vector<OccupancyGrid>& dataset);

}  // namespace voxdet
