#include "voxdet/render.hpp"
#include "voxdet/binary_io.hpp"
#include "voxdet/ops.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace voxdet {

namespace {

using nn::Node;
using nn::Tensor;

// Density of an occupied cell in the occupancy mask: alpha per step is 1 to
// double precision for any step longer than 1e-3.
constexpr double kOpaqueDensity = 1e6;

bool intersect_cube(const Ray& ray, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < -0.5 || o > 0.5) return false;
      continue;
    }
    double lo = (-0.5 - o) / d, hi = (0.5 - o) / d;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t1 > t0;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Samples sit at t0 + (j + offset) * dt.
struct Segment {
  bool hit = false;
  double t0 = 0.0, dt = 0.0, offset = 0.5;
};

Segment segment_for(const Camera& cam, const RenderOptions& opts, int px, int py, Ray& ray) {
  ray = cam.pixel_ray(px, py);
  Segment s;
  double t0, t1;
  if (!intersect_cube(ray, t0, t1)) return s;
  s.hit = true;
  s.t0 = t0;
  s.dt = (t1 - t0) / opts.samples;
  if (opts.jitter) {
    const auto pixel = static_cast<std::uint64_t>(py) * cam.width + px;
    s.offset = static_cast<double>(mix(opts.jitter_seed ^ mix(pixel)) >> 11) * 0x1.0p-53;
  }
  return s;
}

struct Fields {
  int k = 0;
  std::int64_t cells = 0;
  const float* density = nullptr;
  const float* albedo = nullptr;  // 3 planes
};

// Per-sample state for one ray, kept for the backward sweep.
struct RayTrace {
  std::vector<TrilinearTaps> taps;
  std::vector<double> alpha;
  std::vector<Eigen::Vector3d> color;
  std::vector<double> trans;
  double dt = 0.0;
};

// Composites one ray; returns (r, g, b, alpha). Fills `trace` when given.
Eigen::Vector4d march(const Fields& f, const Ray& ray, const Segment& seg, const RenderOptions& opts,
                      RayTrace* trace) {
  const Eigen::Vector3d bg = opts.background.cast<double>();
  if (!seg.hit) {
    if (trace) trace->taps.clear();
    return {bg.x(), bg.y(), bg.z(), 0.0};
  }
  const int n = opts.samples;
  if (trace) {
    trace->taps.resize(n);
    trace->alpha.resize(n);
    trace->color.resize(n);
    trace->trans.resize(n);
    trace->dt = seg.dt;
  }
  const double step = opts.density_scale * seg.dt;
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  double t_acc = 1.0;
  for (int j = 0; j < n; ++j) {
    const Eigen::Vector3d p = ray.origin + (seg.t0 + (j + seg.offset) * seg.dt) * ray.direction;
    const TrilinearTaps taps = trilinear_taps(f.k, p);
    double sigma = 0.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (int q = 0; q < taps.count; ++q) {
      const auto i = taps.index[q];
      const double w = taps.weight[q];
      sigma += w * f.density[i];
      c += w * Eigen::Vector3d(f.albedo[i], f.albedo[f.cells + i], f.albedo[2 * f.cells + i]);
    }
    const double a = -std::expm1(-sigma * step);
    if (trace) {
      trace->taps[j] = taps;
      trace->alpha[j] = a;
      trace->color[j] = c;
      trace->trans[j] = t_acc;
    }
    rgb += t_acc * a * c;
    t_acc *= 1.0 - a;
  }
  rgb += t_acc * bg;
  return {rgb.x(), rgb.y(), rgb.z(), 1.0 - t_acc};
}

// Accumulates d(loss)/d(fields) of one ray given the upstream gradient of
// its (r, g, b, alpha). Uses suffix sums so no division by (1 - alpha).
void march_backward(const RayTrace& tr, const Eigen::Vector4d& g, const RenderOptions& opts, std::int64_t cells,
                    double* g_density, double* g_albedo) {
  const int n = static_cast<int>(tr.taps.size());
  const Eigen::Vector3d g_rgb = g.head<3>();
  const double step = opts.density_scale * tr.dt;
  Eigen::Vector3d radiance = opts.background.cast<double>();  // R_{j+1}
  double behind = 1.0;                                        // prod_{m>j} (1 - alpha_m)
  for (int j = n - 1; j >= 0; --j) {
    const double a = tr.alpha[j], t = tr.trans[j];
    const Eigen::Vector3d& c = tr.color[j];
    const double d_alpha = t * g_rgb.dot(c - radiance) + g[3] * t * behind;
    const double d_sigma = d_alpha * step * (1.0 - a);
    const Eigen::Vector3d d_color = (t * a) * g_rgb;
    const auto& taps = tr.taps[j];
    for (int q = 0; q < taps.count; ++q) {
      const auto i = taps.index[q];
      const double w = taps.weight[q];
      if (g_density) g_density[i] += w * d_sigma;
      if (g_albedo) {
        g_albedo[i] += w * d_color.x();
        g_albedo[cells + i] += w * d_color.y();
        g_albedo[2 * cells + i] += w * d_color.z();
      }
    }
    radiance = a * c + (1.0 - a) * radiance;
    behind *= 1.0 - a;
  }
}

void check_fields(const Tensor& density, const Tensor& albedo, int k) {
  for (float v : density.data()) {
    if (!std::isfinite(v)) throw RenderError("NonFiniteField: density");
    if (v < 0.0f) throw RenderError("InvalidField: negative density " + std::to_string(v));
  }
  for (float v : albedo.data()) {
    if (!std::isfinite(v)) throw RenderError("NonFiniteField: albedo");
    if (v < 0.0f || v > 1.0f) throw RenderError("InvalidField: albedo outside [0,1]: " + std::to_string(v));
  }
  if (albedo.numel() != 3 * density.numel())
    throw RenderError("InvalidField: albedo has " + std::to_string(albedo.numel()) + " entries for " +
                      std::to_string(k) + "^3 density");
}

Image plane_image(const Tensor& t, int channels) {
  const auto& s = t.shape();
  Image img(static_cast<int>(s[1]), static_cast<int>(s[0]), channels);
  const auto d = t.data();
  std::copy(d.begin(), d.end(), img.pixels.begin());
  return img;
}

}  // namespace

void RenderOptions::validate() const {
  if (samples < 2) throw RenderError("InvalidParam: samples must be >= 2, got " + std::to_string(samples));
  if (!(density_scale > 0.0) || !std::isfinite(density_scale))
    throw RenderError("InvalidParam: density scale must be > 0");
  for (int c = 0; c < 3; ++c)
    if (!std::isfinite(background[c])) throw RenderError("InvalidParam: non-finite background");
}

int cube_edge(std::int64_t numel, int channels) {
  if (channels < 1 || numel <= 0 || numel % channels != 0)
    throw RenderError("InvalidField: " + std::to_string(numel) + " entries is not a cube field");
  const std::int64_t cells = numel / channels;
  auto k = static_cast<std::int64_t>(std::llround(std::cbrt(static_cast<double>(cells))));
  if (k * k * k != cells) throw RenderError("InvalidField: " + std::to_string(cells) + " cells is not a cube");
  return static_cast<int>(k);
}

TrilinearTaps trilinear_taps(int k, const Eigen::Vector3d& point) {
  TrilinearTaps taps;
  std::array<std::int64_t, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    if (!(point[a] >= -0.5 && point[a] <= 0.5)) return taps;
    // Inside the cube the field is clamped to the outermost cell centers.
    const double u = std::clamp((point[a] + 0.5) * k - 0.5, 0.0, static_cast<double>(k - 1));
    const double fl = std::min(std::floor(u), static_cast<double>(std::max(k - 2, 0)));
    base[a] = static_cast<std::int64_t>(fl);
    frac[a] = u - fl;
  }
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    std::array<std::int64_t, 3> at{};
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      at[a] = base[a] + bit;
      w *= bit ? frac[a] : 1.0 - frac[a];
    }
    if (w == 0.0) continue;
    taps.index[taps.count] = (at[2] * k + at[1]) * k + at[0];
    taps.weight[taps.count] = w;
    ++taps.count;
  }
  return taps;
}

Tensor trilinear_sample(const Tensor& field, const Eigen::Vector3d& point) {
  const auto& s = field.shape();
  const int channels = s.size() >= 4 ? static_cast<int>(s[s.size() - 4]) : 1;
  const int k = cube_edge(field.numel(), channels);
  const std::int64_t cells = static_cast<std::int64_t>(k) * k * k;
  const TrilinearTaps taps = trilinear_taps(k, point);
  const auto d = field.data();
  std::vector<float> out(channels, 0.0f);
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (int q = 0; q < taps.count; ++q) acc += taps.weight[q] * d[c * cells + taps.index[q]];
    out[c] = static_cast<float>(acc);
  }
  return nn::make_result({channels}, std::move(out), {field}, [taps, cells, channels](Node& n) {
    auto& g = n.inputs[0]->grad;
    for (int c = 0; c < channels; ++c)
      for (int q = 0; q < taps.count; ++q)
        g[c * cells + taps.index[q]] += static_cast<float>(taps.weight[q] * n.grad[c]);
  });
}

RenderedView render(const Tensor& density, const Tensor& albedo, const Camera& cam, const RenderOptions& opts) {
  opts.validate();
  const int k = cube_edge(density.numel(), 1);
  check_fields(density, albedo, k);

  Fields f;
  f.k = k;
  f.cells = density.numel();
  f.density = density.data().data();
  f.albedo = albedo.data().data();

  const int w = cam.width, h = cam.height;
  const std::int64_t pixels = static_cast<std::int64_t>(w) * h;
  std::vector<float> out(static_cast<std::size_t>(pixels) * 4);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < pixels; ++p) {
    Ray ray;
    const Segment seg = segment_for(cam, opts, static_cast<int>(p % w), static_cast<int>(p / w), ray);
    const Eigen::Vector4d v = march(f, ray, seg, opts, nullptr);
    for (int c = 0; c < 4; ++c) out[p * 4 + c] = static_cast<float>(v[c]);
  }

  Tensor combined = nn::make_result({h, w, 4}, std::move(out), {density, albedo}, [cam, opts, k](Node& n) {
    const bool want_density = n.inputs[0]->requires_grad;
    const bool want_albedo = n.inputs[1]->requires_grad;
    Fields f;
    f.k = k;
    f.cells = static_cast<std::int64_t>(k) * k * k;
    f.density = n.inputs[0]->data.data();
    f.albedo = n.inputs[1]->data.data();
    const int width = cam.width;
    const std::int64_t pixels = static_cast<std::int64_t>(width) * cam.height;

    // Privatized per-thread accumulators, reduced in thread order.
    const int threads = omp_get_max_threads();
    std::vector<std::vector<double>> gd(threads), ga(threads);
#pragma omp parallel num_threads(threads)
    {
      const int tid = omp_get_thread_num();
      if (want_density) gd[tid].assign(f.cells, 0.0);
      if (want_albedo) ga[tid].assign(3 * f.cells, 0.0);
      RayTrace trace;
#pragma omp for schedule(static)
      for (std::int64_t p = 0; p < pixels; ++p) {
        const Eigen::Vector4d g(n.grad[p * 4], n.grad[p * 4 + 1], n.grad[p * 4 + 2], n.grad[p * 4 + 3]);
        if (g.isZero(0.0)) continue;
        Ray ray;
        const Segment seg = segment_for(cam, opts, static_cast<int>(p % width), static_cast<int>(p / width), ray);
        if (!seg.hit) continue;
        march(f, ray, seg, opts, &trace);
        march_backward(trace, g, opts, f.cells, want_density ? gd[tid].data() : nullptr,
                       want_albedo ? ga[tid].data() : nullptr);
      }
    }
    auto reduce = [threads](std::vector<std::vector<double>>& parts, std::vector<float>& target) {
      for (std::size_t i = 0; i < target.size(); ++i) {
        double acc = 0.0;
        for (int t = 0; t < threads; ++t) acc += parts[t][i];
        target[i] += static_cast<float>(acc);
      }
    };
    if (want_density) reduce(gd, n.inputs[0]->grad);
    if (want_albedo) reduce(ga, n.inputs[1]->grad);
  });

  RenderedView view;
  view.rgb = nn::narrow(combined, 2, 0, 3);
  view.alpha = nn::reshape(nn::narrow(combined, 2, 3, 1), {h, w});
  view.camera = cam;
  return view;
}

MaskImage render_occupancy_mask(const OccupancyGrid& grid, const Camera& cam, const RenderOptions& opts) {
  opts.validate();
  const Dims dims = grid.dims();
  MaskImage mask(cam.width, cam.height, 1);
  if (grid.empty()) return mask;
  const std::int64_t pixels = static_cast<std::int64_t>(cam.width) * cam.height;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < pixels; ++p) {
    Ray ray;
    const Segment seg = segment_for(cam, opts, static_cast<int>(p % cam.width), static_cast<int>(p / cam.width), ray);
    if (!seg.hit) continue;
    const double opaque = -std::expm1(-kOpaqueDensity * seg.dt);
    double t_acc = 1.0;
    for (int j = 0; j < opts.samples; ++j) {
      const Eigen::Vector3d q = ray.origin + (seg.t0 + (j + seg.offset) * seg.dt) * ray.direction;
      const auto cell = [&](int a, int n) {
        return std::clamp(static_cast<int>(std::floor((q[a] + 0.5) * n)), 0, n - 1);
      };
      if (grid.at(cell(0, dims.x), cell(1, dims.y), cell(2, dims.z))) t_acc *= 1.0 - opaque;
    }
    mask.pixels[p] = static_cast<float>(1.0 - t_acc);
  }
  return mask;
}

Image RenderedView::rgb_image() const { return plane_image(rgb, 3); }
Image RenderedView::alpha_image() const { return plane_image(alpha, 1); }

void save_view_png(const RenderedView& view, const std::filesystem::path& path) {
  write_file(path, encode_png_rgba(view.rgb_image(), view.alpha_image()));
}

}  // namespace voxdet
