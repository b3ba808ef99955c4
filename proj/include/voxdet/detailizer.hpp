#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxdet/checkpoint.hpp"
#include "voxdet/conv.hpp"
#include "voxdet/grid.hpp"

namespace voxdet {

class InvalidConfig : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DetailizerConfig {
  int k = 32;
  int K = 128;
  // Output channels of the five 3^3 convolutions.
  std::vector<int> conv_channels{32, 64, 64, 64, 64};
  // Output channels of every transposed convolution but the last; one fewer
  // entry than the number of doublings.
  std::vector<int> up_channels{32};
  float leaky_slope = 0.01f;
  std::uint64_t seed = 1;

  int upsample_layers() const;
  // Throws InvalidConfig.
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static DetailizerConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

// Convolution stack followed by stride-2 transposed convolutions, leaky ReLU
// between layers and no activation after the last one.
struct UpsamplingNetwork {
  std::vector<nn::Conv3dLayer> convs;
  std::vector<nn::ConvTranspose3dLayer> ups;
  float leaky_slope = 0.01f;

  static UpsamplingNetwork create(const DetailizerConfig& config, int out_channels, Rng& rng);
  nn::Tensor operator()(const nn::Tensor& input) const;
  std::vector<nn::Tensor> parameters() const;
};

struct DetailizerModel {
  DetailizerConfig config;
  UpsamplingNetwork density_net;  // 1 output channel
  UpsamplingNetwork albedo_net;   // 3 output channels

  std::vector<nn::Tensor> parameters() const;
  // Parameters paired with stable checkpoint names.
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters() const;
};

struct DetailizedShape {
  nn::Tensor raw_density;  // softplus(G_d), [K,K,K], before masking
  nn::Tensor density;      // raw_density * mask, [K,K,K]
  nn::Tensor albedo;       // sigmoid(G_a), [3,K,K,K]
  OccupancyGrid mask;      // upsampled dilated coarse grid, K^3
};

DetailizerModel build_detailizer(const DetailizerConfig& config);

// The fine mask: upsample_nearest(dilate(coarse, 1), K/k).
OccupancyGrid structure_mask(const OccupancyGrid& coarse, int factor);

// Throws DimMismatch unless coarse is k^3.
DetailizedShape detailize(const DetailizerModel& model, const OccupancyGrid& coarse);

nn::CheckpointData to_checkpoint(const DetailizerModel& model);
// Throws nn::CorruptCheckpoint on missing or misshapen tensors or bad config.
DetailizerModel from_checkpoint(const nn::CheckpointData& data);
void save_detailizer(const DetailizerModel& model, const std::filesystem::path& path);
DetailizerModel load_detailizer(const std::filesystem::path& path);

}  // namespace voxdet
