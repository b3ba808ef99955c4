#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxdet/detailizer.hpp"
#include "voxdet/grid.hpp"
#include "voxdet/image.hpp"
#include "voxdet/render.hpp"

namespace voxdet {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// density > threshold at K^3, then max-pooled to k^3. Throws
// GridError("IndivisibleDims") when K is not a multiple of k.
OccupancyGrid voxelize_density(const nn::Tensor& density, double threshold, int k);

// |v & v'| / |v | v'|; two empty grids score 1. Throws GridError on dims mismatch.
double strict_iou(const OccupancyGrid& v, const OccupancyGrid& v_prime);
// |v & v'| / |v|. Throws EvalError("EmptyReference") when v is empty.
double loose_iou(const OccupancyGrid& v, const OccupancyGrid& v_prime);

struct EmbeddingVector {
  enum class Source { Text, Image };
  std::vector<double> values;
  Source source = Source::Image;
};

// max(100 cos, 0). Throws EvalError("ZeroNorm") / ("LengthMismatch").
double clip_score(const EmbeddingVector& text, const EmbeddingVector& image);

// Rows are images.
using FeatureSet = Eigen::MatrixXd;

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) with unbiased covariances.
// Throws EvalError("IllConditioned") if an eigenvalue falls below -1e-6 and
// EvalError("InvalidFeatures") for fewer than 2 rows or unequal widths.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Non-semantic stand-ins for Inception/CLIP: seeded Gaussian random
// projections of an area-downsampled image and of a bag of hashed words.
class RandomProjectionFeatures {
 public:
  explicit RandomProjectionFeatures(int dim = 64, std::uint64_t seed = 7, int grid = 16);
  Eigen::VectorXd image_features(const Image& rgb) const;
  FeatureSet features(const std::vector<Image>& images) const;
  int dim() const { return dim_; }

 private:
  int dim_;
  int grid_;
  Eigen::MatrixXd projection_;  // dim x (grid*grid*3)
};

class RandomProjectionEmbedder {
 public:
  explicit RandomProjectionEmbedder(int dim = 64, std::uint64_t seed = 11);
  EmbeddingVector embed_text(const std::string& text) const;
  EmbeddingVector embed_image(const Image& rgb) const;

 private:
  int dim_;
  std::uint64_t seed_;
  RandomProjectionFeatures image_;
};

struct EvalProtocol {
  double elevation_deg = 20.0;
  double radius = 2.0;
  double fov_deg = 50.0;
  int image_size = 64;
  int fid_views = 4;    // azimuths 0, 90, 180, 270
  int clip_views = 24;  // every 15 degrees
  double threshold = 30.0;
  std::uint64_t feature_seed = 7;
  std::uint64_t embed_seed = 11;
  RenderOptions render;

  std::vector<Camera> cameras(int count) const;
};

struct MetricReport {
  double strict_iou = 0.0;
  double loose_iou = 0.0;
  double clip_score = 0.0;
  double render_fid = 0.0;
  int n_views = 0;
  std::vector<std::uint64_t> seeds;

  std::string to_json() const;
};

// Renders the FID and CLIP orbits of the shape and scores it against its
// coarse input. Without reference features, the FID reference set is the
// coarse grid rendered as a gray solid from the same cameras.
MetricReport eval_protocol(const DetailizedShape& shape, const OccupancyGrid& coarse, const std::string& prompt,
                           const EvalProtocol& protocol = {},
                           const std::optional<FeatureSet>& reference_features = std::nullopt);

struct BatchRow {
  std::string prompt;
  std::string shape;
  MetricReport report;
};
// Header: prompt,shape,strict_iou,loose_iou,clip_score,render_fid,n_views.
std::string metrics_csv(const std::vector<BatchRow>& rows);

}  // namespace voxdet
