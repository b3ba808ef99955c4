#include "voxdet/augment.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "voxdet/rng.hpp"

namespace voxdet {

void AugmentParams::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(scale_min[i] > 0.0) || !(scale_min[i] <= scale_max[i])) {
      throw std::invalid_argument("augment: scale range must satisfy 0 < min <= max");
    }
  }
  if (merge_min < 1 || merge_max < merge_min) {
    throw std::invalid_argument("augment: merge range must satisfy 1 <= min <= max");
  }
  if (quarter_turns.empty()) throw std::invalid_argument("augment: empty rotation set");
  if (free_angle_deg < 0.0) throw std::invalid_argument("augment: free angle must be >= 0");
}

std::vector<Placement> draw_placements(std::size_t source_count, const AugmentParams& params) {
  params.validate();
  if (source_count == 0) throw std::invalid_argument("augment: no sources");
  Rng rng(params.seed);
  const auto n = rng.uniform_int(params.merge_min, params.merge_max);
  std::vector<Placement> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Placement p;
    p.source = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(source_count) - 1));
    for (int a = 0; a < 3; ++a) p.scale[a] = rng.uniform(params.scale_min[a], params.scale_max[a]);
    const auto turn = rng.uniform_int(0, static_cast<std::int64_t>(params.quarter_turns.size()) - 1);
    p.quarter_turns = params.quarter_turns[static_cast<std::size_t>(turn)];
    if (params.free_angle_deg > 0.0) {
      p.free_angle_deg = rng.uniform(-params.free_angle_deg, params.free_angle_deg);
    }
    out.push_back(p);
  }
  return out;
}

namespace {

// Inverse of a rotation about +y: (x,z) -> (x c - z s, x s + z c) undoes
// x' = x c + z s, z' = -x s + z c.
void unrotate(double c, double s, double& x, double& z) {
  const double ux = x * c - z * s;
  const double uz = x * s + z * c;
  x = ux;
  z = uz;
}

}  // namespace

OccupancyGrid transform_grid(const OccupancyGrid& grid, const Placement& placement) {
  const Dims& d = grid.dims();
  const double half[3] = {0.5 * d.x, 0.5 * d.y, 0.5 * d.z};
  static constexpr double kQuarterCos[4] = {1.0, 0.0, -1.0, 0.0};
  static constexpr double kQuarterSin[4] = {0.0, 1.0, 0.0, -1.0};
  const int q = ((placement.quarter_turns % 4) + 4) % 4;
  const double free_rad = placement.free_angle_deg * std::numbers::pi / 180.0;
  const double fc = std::cos(free_rad), fs = std::sin(free_rad);

  OccupancyGrid out(d, grid.label());
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        double px = x + 0.5 - half[0];
        double py = y + 0.5 - half[1];
        double pz = z + 0.5 - half[2];
        if (placement.free_angle_deg != 0.0) unrotate(fc, fs, px, pz);
        unrotate(kQuarterCos[q], kQuarterSin[q], px, pz);
        const int sx = static_cast<int>(std::floor(px / placement.scale[0] + half[0]));
        const int sy = static_cast<int>(std::floor(py / placement.scale[1] + half[1]));
        const int sz = static_cast<int>(std::floor(pz / placement.scale[2] + half[2]));
        if (grid.in_bounds(sx, sy, sz) && grid.at(sx, sy, sz)) out.set(x, y, z);
      }
    }
  }
  return out;
}

OccupancyGrid apply_placements(const std::vector<OccupancyGrid>& sources,
                               const std::vector<Placement>& placements) {
  if (sources.empty()) throw std::invalid_argument("augment: no sources");
  for (const auto& s : sources) {
    if (s.dims() != sources.front().dims()) throw GridError("augment: sources must share dims");
  }
  OccupancyGrid out(sources.front().dims());
  for (const auto& p : placements) {
    if (p.source >= sources.size()) throw std::out_of_range("augment: placement source index");
    out = out.united(transform_grid(sources[p.source], p));
  }
  if (out.empty()) throw GridError("EmptyResult");
  return out;
}

OccupancyGrid augment(const std::vector<OccupancyGrid>& sources, const AugmentParams& params) {
  if (sources.empty()) throw std::invalid_argument("augment: no sources");
  return apply_placements(sources, draw_placements(sources.size(), params));
}

}  // namespace voxdet
