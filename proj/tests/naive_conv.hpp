#pragma once

#include <cstdint>
#include <vector>

#include "voxdet/rng.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet::testing {

inline nn::Tensor random_tensor(Rng& rng, nn::Shape s, bool grad = false, double lo = -1, double hi = 1) {
  std::vector<float> v(static_cast<std::size_t>(nn::shape_numel(s)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return nn::Tensor::from(s, v, grad);
}

// Direct seven-loop cross-correlation, accumulated in double.
inline std::vector<double> naive_conv(const nn::Tensor& x, const nn::Tensor& w, const nn::Tensor& b, int s, int p) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t C = xs[1], D = xs[2], H = xs[3], W = xs[4], O = ws[0], k = ws[2];
  const std::int64_t Do = (D + 2 * p - k) / s + 1, Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  std::vector<double> out(static_cast<std::size_t>(O * Do * Ho * Wo));
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t z = 0; z < Do; ++z)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xx = 0; xx < Wo; ++xx) {
          double acc = b.defined() ? b.data()[o] : 0.0;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t kz = 0; kz < k; ++kz)
              for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                  const auto iz = z * s - p + kz, iy = y * s - p + ky, ix = xx * s - p + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                  acc += static_cast<double>(w.data()[(((o * C + c) * k + kz) * k + ky) * k + kx]) *
                         x.data()[((c * D + iz) * H + iy) * W + ix];
                }
          out[((o * Do + z) * Ho + y) * Wo + xx] = acc;
        }
  return out;
}

// Scatter form of the transposed convolution, accumulated in double.
inline std::vector<double> naive_conv_transpose(const nn::Tensor& x, const nn::Tensor& w, const nn::Tensor& b, int s, int p) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t C = xs[1], D = xs[2], H = xs[3], W = xs[4], O = ws[1], k = ws[2];
  const std::int64_t Do = (D - 1) * s - 2 * p + k, Ho = (H - 1) * s - 2 * p + k, Wo = (W - 1) * s - 2 * p + k;
  std::vector<double> out(static_cast<std::size_t>(O * Do * Ho * Wo), 0.0);
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) out[o * Do * Ho * Wo + i] = b.defined() ? b.data()[o] : 0.0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t z = 0; z < D; ++z)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx) {
          const double v = x.data()[((c * D + z) * H + y) * W + xx];
          for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t kz = 0; kz < k; ++kz)
              for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx) {
                  const auto oz = z * s - p + kz, oy = y * s - p + ky, ox = xx * s - p + kx;
                  if (oz < 0 || oy < 0 || ox < 0 || oz >= Do || oy >= Ho || ox >= Wo) continue;
                  out[((o * Do + oz) * Ho + oy) * Wo + ox] +=
                      v * w.data()[(((c * O + o) * k + kz) * k + ky) * k + kx];
                }
        }
  return out;
}

inline double project(const std::vector<double>& out, const std::vector<float>& w) {
  double acc = 0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
  return acc;
}

}  // namespace voxdet::testing
