#pragma once

#include "voxdet/rng.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet::nn {

// Cross-correlation. input [1,C,D,H,W], weight [O,C,k,k,k], bias [O] or
// undefined. Throws AutodiffError("ShapeMismatch ...") on inconsistent shapes.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Adjoint of conv3d with the same weight tensor read as [C_in, C_out, k,k,k]:
// output spatial size is (n-1)*stride - 2*padding + k.
Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                        int padding);

// 3^3 kernel, stride 1, padding 1 (spatial dims preserved).
struct Conv3dLayer {
  Tensor weight;  // [out, in, 3, 3, 3]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 1;

  // He-uniform weights (fan-in = in*27), zero bias.
  static Conv3dLayer create(int in_channels, int out_channels, Rng& rng);
  Tensor operator()(const Tensor& input) const { return conv3d(input, weight, bias, stride, padding); }
};

// 4^3 kernel, stride 2, padding 1: exactly doubles every spatial dim.
struct ConvTranspose3dLayer {
  Tensor weight;  // [in, out, 4, 4, 4]
  Tensor bias;    // [out]
  static constexpr int stride = 2;
  static constexpr int padding = 1;

  // He-uniform with fan-in = in*8, the taps feeding one output voxel.
  static ConvTranspose3dLayer create(int in_channels, int out_channels, Rng& rng);
  Tensor operator()(const Tensor& input) const {
    return conv_transpose3d(input, weight, bias, stride, padding);
  }
};

}  // namespace voxdet::nn
