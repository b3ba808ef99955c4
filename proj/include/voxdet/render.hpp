#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>

#include "voxdet/camera.hpp"
#include "voxdet/grid.hpp"
#include "voxdet/image.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet {

struct RenderOptions {
  int samples = 192;
  double density_scale = 1.0;
  Eigen::Vector3f background{1.0f, 1.0f, 1.0f};
  // Per-ray random offset of the sample lattice, keyed by (jitter_seed, pixel).
  bool jitter = false;
  std::uint64_t jitter_seed = 0;

  // Throws RenderError("InvalidParam: ...").
  void validate() const;
};

struct RenderedView {
  nn::Tensor rgb;    // [H, W, 3]
  nn::Tensor alpha;  // [H, W]
  Camera camera;

  Image rgb_image() const;
  Image alpha_image() const;
};

// Fields are K^3 cubes stored x fastest; density is [K,K,K] (any shape with
// K^3 elements) and albedo is channel-planar [3,K,K,K]. Throws
// RenderError("NonFiniteField") on NaN/inf and RenderError("InvalidField: ...")
// on negative density, albedo outside [0,1] or mismatched sizes.
RenderedView render(const nn::Tensor& density, const nn::Tensor& albedo, const Camera& cam,
                    const RenderOptions& opts = {});

// Alpha of the grid drawn as an opaque solid: each occupied cell is a box of
// saturating density, sampled by nearest cell on the same sample lattice.
MaskImage render_occupancy_mask(const OccupancyGrid& grid, const Camera& cam, const RenderOptions& opts = {});

// 8-corner blend of every channel of a channel-planar [C,K,K,K] field at an
// object-space point. Values are taken at cell centers and held constant out
// to the cube faces; points outside the cube give 0. Returns [C].
nn::Tensor trilinear_sample(const nn::Tensor& field, const Eigen::Vector3d& point);

struct TrilinearTaps {
  std::array<std::int64_t, 8> index{};
  std::array<double, 8> weight{};
  int count = 0;
};
// Corner cells of a K^3 grid with nonzero weight; empty outside the cube.
TrilinearTaps trilinear_taps(int k, const Eigen::Vector3d& point);

// Edge length K of a cube field holding `channels` planes, or throws.
int cube_edge(std::int64_t numel, int channels);

void save_view_png(const RenderedView& view, const std::filesystem::path& path);

}  // namespace voxdet
