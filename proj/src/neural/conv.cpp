#include "voxdet/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace voxdet::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstMatMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

struct Vol {
  std::int64_t c, d, h, w;
  std::int64_t plane() const { return h * w; }
  std::int64_t spatial() const { return d * h * w; }
};

// Geometry of a strided cross-correlation from a `big` volume onto a `small`
// one. Both conv3d (big = input) and conv_transpose3d (big = output) use it.
struct Lowering {
  Vol big;
  Vol small;
  int k, stride, pad;
  std::int64_t rows() const { return big.c * k * k * k; }
};

// Columns for small-grid planes [z0, z1): row (c,kz,ky,kx), column (z,y,x).
void im2col(const Lowering& g, const float* src, std::int64_t z0, std::int64_t z1, float* cols) {
  const std::int64_t n = (z1 - z0) * g.small.plane();
  const int k = g.k;
  for (std::int64_t c = 0; c < g.big.c; ++c) {
    const float* plane_c = src + c * g.big.spatial();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          float* row = cols + (((c * k + kz) * k + ky) * k + kx) * n;
          std::int64_t col = 0;
          for (std::int64_t z = z0; z < z1; ++z) {
            const std::int64_t iz = z * g.stride - g.pad + kz;
            const bool zin = iz >= 0 && iz < g.big.d;
            for (std::int64_t y = 0; y < g.small.h; ++y) {
              const std::int64_t iy = y * g.stride - g.pad + ky;
              if (!zin || iy < 0 || iy >= g.big.h) {
                std::fill_n(row + col, g.small.w, 0.0f);
                col += g.small.w;
                continue;
              }
              const float* line = plane_c + (iz * g.big.h + iy) * g.big.w;
              for (std::int64_t x = 0; x < g.small.w; ++x) {
                const std::int64_t ix = x * g.stride - g.pad + kx;
                row[col++] = (ix >= 0 && ix < g.big.w) ? line[ix] : 0.0f;
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-add columns back onto the big volume.
void col2im(const Lowering& g, const float* cols, std::int64_t z0, std::int64_t z1, float* dst) {
  const std::int64_t n = (z1 - z0) * g.small.plane();
  const int k = g.k;
  for (std::int64_t c = 0; c < g.big.c; ++c) {
    float* plane_c = dst + c * g.big.spatial();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const float* row = cols + (((c * k + kz) * k + ky) * k + kx) * n;
          std::int64_t col = 0;
          for (std::int64_t z = z0; z < z1; ++z) {
            const std::int64_t iz = z * g.stride - g.pad + kz;
            const bool zin = iz >= 0 && iz < g.big.d;
            for (std::int64_t y = 0; y < g.small.h; ++y) {
              const std::int64_t iy = y * g.stride - g.pad + ky;
              if (!zin || iy < 0 || iy >= g.big.h) {
                col += g.small.w;
                continue;
              }
              float* line = plane_c + (iz * g.big.h + iy) * g.big.w;
              for (std::int64_t x = 0; x < g.small.w; ++x) {
                const std::int64_t ix = x * g.stride - g.pad + kx;
                if (ix >= 0 && ix < g.big.w) line[ix] += row[col];
                ++col;
              }
            }
          }
        }
  }
}

// Small-grid planes per chunk, keeping a column buffer near 16 MB.
std::int64_t planes_per_chunk(const Lowering& g) {
  const std::int64_t per_plane = g.rows() * g.small.plane();
  return std::clamp<std::int64_t>((std::int64_t{1} << 22) / std::max<std::int64_t>(per_plane, 1), 1, g.small.d);
}

template <typename Fn>
void for_each_chunk(const Lowering& g, Fn fn) {
  const std::int64_t step = planes_per_chunk(g);
  std::vector<float> cols;
  for (std::int64_t z0 = 0; z0 < g.small.d; z0 += step) {
    const std::int64_t z1 = std::min(g.small.d, z0 + step);
    cols.resize(static_cast<std::size_t>(g.rows() * (z1 - z0) * g.small.plane()));
    fn(z0, z1, cols.data());
  }
}

Vol volume_of(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.size() != 5 || s[0] != 1) {
    throw AutodiffError(std::string("ShapeMismatch: ") + what + " must be [1,C,D,H,W], got " + shape_string(s));
  }
  return {s[1], s[2], s[3], s[4]};
}

void check_kernel(const Tensor& weight, std::int64_t expect_dim0, std::int64_t expect_dim1, const char* op) {
  const auto& s = weight.shape();
  if (s.size() != 5 || s[2] != s[3] || s[3] != s[4] || s[0] != expect_dim0 || (expect_dim1 >= 0 && s[1] != expect_dim1)) {
    throw AutodiffError(std::string("ShapeMismatch in ") + op + ": weight " + shape_string(s));
  }
}

void check_bias(const Tensor& bias, std::int64_t channels, const char* op) {
  if (bias.defined() && bias.shape() != Shape{channels}) {
    throw AutodiffError(std::string("ShapeMismatch in ") + op + ": bias " + shape_string(bias.shape()));
  }
}

void add_bias(const Tensor& bias, std::int64_t channels, std::int64_t spatial, std::vector<float>& out) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (std::int64_t c = 0; c < channels; ++c) {
    std::for_each(out.begin() + c * spatial, out.begin() + (c + 1) * spatial, [v = b[c]](float& o) { o += v; });
  }
}

void accumulate_bias_grad(Node& bias, const std::vector<float>& grad_out, std::int64_t spatial) {
  for (std::size_t c = 0; c < bias.grad.size(); ++c) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < spatial; ++i) acc += grad_out[c * spatial + i];
    bias.grad[c] += static_cast<float>(acc);
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Vol in = volume_of(input, "conv3d input");
  if (weight.shape().size() != 5) throw AutodiffError("ShapeMismatch in conv3d: weight " + shape_string(weight.shape()));
  const std::int64_t out_c = weight.shape()[0];
  check_kernel(weight, out_c, in.c, "conv3d");
  check_bias(bias, out_c, "conv3d");
  const int k = static_cast<int>(weight.shape()[2]);
  if (stride < 1 || padding < 0) throw AutodiffError("conv3d: bad stride/padding");
  auto out_dim = [&](std::int64_t n) {
    const std::int64_t span = n + 2 * padding - k;
    if (span < 0) throw AutodiffError("ShapeMismatch in conv3d: input smaller than kernel");
    return span / stride + 1;
  };
  const Lowering g{in, Vol{out_c, out_dim(in.d), out_dim(in.h), out_dim(in.w)}, k, stride, padding};
  const std::int64_t lo = g.small.spatial();

  std::vector<float> out(static_cast<std::size_t>(out_c * lo), 0.0f);
  const ConstMatMap w(weight.data().data(), out_c, g.rows(), Eigen::OuterStride<>(g.rows()));
  for_each_chunk(g, [&](std::int64_t z0, std::int64_t z1, float* cols) {
    const std::int64_t n = (z1 - z0) * g.small.plane();
    im2col(g, input.data().data(), z0, z1, cols);
    MatMap block(out.data() + z0 * g.small.plane(), out_c, n, Eigen::OuterStride<>(lo));
    block.noalias() = w * ConstMatMap(cols, g.rows(), n, Eigen::OuterStride<>(n));
  });
  add_bias(bias, out_c, lo, out);

  return make_result({1, out_c, g.small.d, g.small.h, g.small.w}, std::move(out), {input, weight, bias},
                     [g, out_c, lo](Node& node) {
                       Node& x = *node.inputs[0];
                       Node& wt = *node.inputs[1];
                       Node* b = node.inputs[2].get();
                       const ConstMatMap w(wt.data.data(), out_c, g.rows(), Eigen::OuterStride<>(g.rows()));
                       for_each_chunk(g, [&](std::int64_t z0, std::int64_t z1, float* cols) {
                         const std::int64_t n = (z1 - z0) * g.small.plane();
                         const ConstMatMap dout(node.grad.data() + z0 * g.small.plane(), out_c, n,
                                                Eigen::OuterStride<>(lo));
                         if (wt.requires_grad) {
                           im2col(g, x.data.data(), z0, z1, cols);
                           MatMap dw(wt.grad.data(), out_c, g.rows(), Eigen::OuterStride<>(g.rows()));
                           dw.noalias() += dout * ConstMatMap(cols, g.rows(), n, Eigen::OuterStride<>(n)).transpose();
                         }
                         if (x.requires_grad) {
                           MatMap dcols(cols, g.rows(), n, Eigen::OuterStride<>(n));
                           dcols.noalias() = w.transpose() * dout;
                           col2im(g, cols, z0, z1, x.grad.data());
                         }
                       });
                       if (b && b->requires_grad) accumulate_bias_grad(*b, node.grad, lo);
                     });
}

Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                        int padding) {
  const Vol in = volume_of(input, "conv_transpose3d input");
  check_kernel(weight, in.c, -1, "conv_transpose3d");
  const std::int64_t out_c = weight.shape()[1];
  check_bias(bias, out_c, "conv_transpose3d");
  const int k = static_cast<int>(weight.shape()[2]);
  if (stride < 1 || padding < 0) throw AutodiffError("conv_transpose3d: bad stride/padding");
  auto out_dim = [&](std::int64_t n) {
    const std::int64_t o = (n - 1) * stride - 2 * padding + k;
    if (o < 1) throw AutodiffError("ShapeMismatch in conv_transpose3d: empty output");
    return o;
  };
  const Vol big{out_c, out_dim(in.d), out_dim(in.h), out_dim(in.w)};
  const Lowering g{big, Vol{in.c, in.d, in.h, in.w}, k, stride, padding};
  const std::int64_t lin = in.spatial();

  std::vector<float> out(static_cast<std::size_t>(out_c * big.spatial()), 0.0f);
  // Weight [C_in, C_out*k^3] viewed row-major; the columns are W^T x.
  const ConstMatMap w(weight.data().data(), in.c, g.rows(), Eigen::OuterStride<>(g.rows()));
  for_each_chunk(g, [&](std::int64_t z0, std::int64_t z1, float* cols) {
    const std::int64_t n = (z1 - z0) * g.small.plane();
    const ConstMatMap x(input.data().data() + z0 * g.small.plane(), in.c, n, Eigen::OuterStride<>(lin));
    MatMap c(cols, g.rows(), n, Eigen::OuterStride<>(n));
    c.noalias() = w.transpose() * x;
    col2im(g, cols, z0, z1, out.data());
  });
  add_bias(bias, out_c, big.spatial(), out);

  return make_result({1, out_c, big.d, big.h, big.w}, std::move(out), {input, weight, bias},
                     [g, in, lin](Node& node) {
                       Node& x = *node.inputs[0];
                       Node& wt = *node.inputs[1];
                       Node* b = node.inputs[2].get();
                       const ConstMatMap w(wt.data.data(), in.c, g.rows(), Eigen::OuterStride<>(g.rows()));
                       for_each_chunk(g, [&](std::int64_t z0, std::int64_t z1, float* cols) {
                         const std::int64_t n = (z1 - z0) * g.small.plane();
                         im2col(g, node.grad.data(), z0, z1, cols);
                         const ConstMatMap gc(cols, g.rows(), n, Eigen::OuterStride<>(n));
                         if (x.requires_grad) {
                           MatMap dx(x.grad.data() + z0 * g.small.plane(), in.c, n, Eigen::OuterStride<>(lin));
                           dx.noalias() += w * gc;
                         }
                         if (wt.requires_grad) {
                           const ConstMatMap xv(x.data.data() + z0 * g.small.plane(), in.c, n, Eigen::OuterStride<>(lin));
                           MatMap dw(wt.grad.data(), in.c, g.rows(), Eigen::OuterStride<>(g.rows()));
                           dw.noalias() += xv * gc.transpose();
                         }
                       });
                       if (b && b->requires_grad) accumulate_bias_grad(*b, node.grad, g.big.spatial());
                     });
}

namespace {

Tensor he_uniform(Shape shape, double fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace

Conv3dLayer Conv3dLayer::create(int in_channels, int out_channels, Rng& rng) {
  Conv3dLayer layer;
  layer.weight = he_uniform({out_channels, in_channels, 3, 3, 3}, in_channels * 27.0, rng);
  layer.bias = Tensor::zeros({out_channels}, true);
  return layer;
}

ConvTranspose3dLayer ConvTranspose3dLayer::create(int in_channels, int out_channels, Rng& rng) {
  ConvTranspose3dLayer layer;
  layer.weight = he_uniform({in_channels, out_channels, 4, 4, 4}, in_channels * 8.0, rng);
  layer.bias = Tensor::zeros({out_channels}, true);
  return layer;
}

}  // namespace voxdet::nn
