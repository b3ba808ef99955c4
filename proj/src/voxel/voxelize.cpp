#include "voxdet/voxelize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace voxdet {

bool triangle_box_overlap(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extent,
                          const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                          const Eigen::Vector3d& c, bool open_box) {
  const Eigen::Vector3d v0 = a - center, v1 = b - center, v2 = c - center;
  const Eigen::Vector3d edges[3] = {v1 - v0, v2 - v1, v0 - v2};

  auto separated = [&](const Eigen::Vector3d& axis) {
    if (axis.squaredNorm() < 1e-30) return false;
    const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
    const double lo = std::min({p0, p1, p2});
    const double hi = std::max({p0, p1, p2});
    const double r = half_extent.cwiseProduct(axis.cwiseAbs()).sum();
    return open_box ? (lo >= r || hi <= -r) : (lo > r || hi < -r);
  };

  for (int i = 0; i < 3; ++i) {
    if (separated(Eigen::Vector3d::Unit(i))) return false;
  }
  if (separated(edges[0].cross(edges[1]))) return false;
  for (int i = 0; i < 3; ++i) {
    for (const auto& e : edges) {
      if (separated(Eigen::Vector3d::Unit(i).cross(e))) return false;
    }
  }
  return true;
}

namespace {

struct CellRange {
  int lo[3];
  int hi[3];
};

// Cells (including one virtual layer outside on each side) touched by the
// triangle's bounding box.
CellRange cell_range(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                     int k, int pad) {
  CellRange r;
  for (int i = 0; i < 3; ++i) {
    const double lo = std::min({a[i], b[i], c[i]});
    const double hi = std::max({a[i], b[i], c[i]});
    r.lo[i] = std::clamp(static_cast<int>(std::floor((lo + 0.5) * k)) - 1, -pad, k - 1 + pad);
    r.hi[i] = std::clamp(static_cast<int>(std::floor((hi + 0.5) * k)) + 1, -pad, k - 1 + pad);
  }
  return r;
}

}  // namespace

VoxelizeResult voxelize_mesh(const TriangleMesh& mesh, int k) {
  if (k < 2) throw GridError("voxelize_mesh: k must be >= 2");
  mesh.validate();
  const Dims dims = Dims::cube(k);
  const double cell = 1.0 / k;
  auto center_of = [&](int i) { return (i + 0.5) * cell - 0.5; };

  OccupancyGrid surface(dims);
  // blocked[axis] marks the link from cell c to c+1 along axis; index runs
  // over c in [-1, k-1] along the axis (k+1 links) and [0,k) on the others.
  const std::size_t links = static_cast<std::size_t>(k + 1) * k * k;
  std::vector<std::uint8_t> blocked[3] = {std::vector<std::uint8_t>(links, 0),
                                          std::vector<std::uint8_t>(links, 0),
                                          std::vector<std::uint8_t>(links, 0)};
  auto link_index = [k](int axis, int x, int y, int z) {
    // Shift the axis coordinate so c = -1 maps to 0.
    int c[3] = {x, y, z};
    c[axis] += 1;
    const int n[3] = {axis == 0 ? k + 1 : k, axis == 1 ? k + 1 : k, axis == 2 ? k + 1 : k};
    return (static_cast<std::size_t>(c[2]) * n[1] + c[1]) * n[0] + c[0];
  };

  const Eigen::Vector3d half_cell = Eigen::Vector3d::Constant(0.5 * cell);
  for (const auto& t : mesh.triangles) {
    const Eigen::Vector3d a = mesh.vertices[t[0]].cast<double>();
    const Eigen::Vector3d b = mesh.vertices[t[1]].cast<double>();
    const Eigen::Vector3d c = mesh.vertices[t[2]].cast<double>();

    const CellRange inner = cell_range(a, b, c, k, 0);
    for (int z = inner.lo[2]; z <= inner.hi[2]; ++z) {
      for (int y = inner.lo[1]; y <= inner.hi[1]; ++y) {
        for (int x = inner.lo[0]; x <= inner.hi[0]; ++x) {
          if (surface.at(x, y, z)) continue;
          const Eigen::Vector3d ctr(center_of(x), center_of(y), center_of(z));
          if (triangle_box_overlap(ctr, half_cell, a, b, c, true)) surface.set(x, y, z);
        }
      }
    }

    const CellRange outer = cell_range(a, b, c, k, 1);
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::Vector3d half_link = Eigen::Vector3d::Zero();
      half_link[axis] = 0.5 * cell;
      int lo[3], hi[3];
      for (int i = 0; i < 3; ++i) {
        lo[i] = std::max(outer.lo[i], i == axis ? -1 : 0);
        hi[i] = std::min(outer.hi[i], k - 1);
      }
      for (int z = lo[2]; z <= hi[2]; ++z) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
          for (int x = lo[0]; x <= hi[0]; ++x) {
            const std::size_t li = link_index(axis, x, y, z);
            if (blocked[axis][li]) continue;
            Eigen::Vector3d mid(center_of(x), center_of(y), center_of(z));
            mid[axis] += 0.5 * cell;
            if (triangle_box_overlap(mid, half_link, a, b, c, false)) blocked[axis][li] = 1;
          }
        }
      }
    }
  }

  // Exterior flood fill, entering from the virtual layer around the grid.
  std::vector<std::uint8_t> reached(dims.count(), 0);
  std::deque<std::array<int, 3>> queue;
  auto visit = [&](int x, int y, int z) {
    const std::size_t i = surface.index(x, y, z);
    if (!reached[i]) {
      reached[i] = 1;
      queue.push_back({x, y, z});
    }
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        for (int side = 0; side < 2; ++side) {
          int cell_c[3], link_c[3];
          const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
          cell_c[o1] = link_c[o1] = u;
          cell_c[o2] = link_c[o2] = v;
          cell_c[axis] = side == 0 ? 0 : k - 1;
          link_c[axis] = side == 0 ? -1 : k - 1;
          if (!blocked[axis][link_index(axis, link_c[0], link_c[1], link_c[2])]) {
            visit(cell_c[0], cell_c[1], cell_c[2]);
          }
        }
      }
    }
  }
  while (!queue.empty()) {
    const auto p = queue.front();
    queue.pop_front();
    for (int axis = 0; axis < 3; ++axis) {
      for (int dir = -1; dir <= 1; dir += 2) {
        auto q = p;
        q[axis] += dir;
        if (q[axis] < 0 || q[axis] >= k) continue;
        auto from = dir > 0 ? p : q;
        if (blocked[axis][link_index(axis, from[0], from[1], from[2])]) continue;
        visit(q[0], q[1], q[2]);
      }
    }
  }

  VoxelizeResult result{OccupancyGrid(dims), false, {}};
  std::size_t non_surface = 0, reached_non_surface = 0;
  for (std::size_t i = 0; i < dims.count(); ++i) {
    if (surface[i]) continue;
    ++non_surface;
    reached_non_surface += reached[i];
  }
  const std::size_t surface_cells = surface.count();
  if (surface_cells > 0 && mesh.open_edge_count() > 0 &&
      static_cast<double>(reached_non_surface) >= 0.95 * static_cast<double>(non_surface)) {
    result.leaked = true;
    result.warnings.push_back("NonManifoldLeak: exterior fill reached the interior of an open mesh; "
                              "returning the surface shell only");
    result.grid = std::move(surface);
    return result;
  }
  std::vector<std::uint8_t> cells(dims.count());
  for (std::size_t i = 0; i < dims.count(); ++i) cells[i] = (surface[i] || !reached[i]) ? 1 : 0;
  result.grid = OccupancyGrid(dims, std::move(cells));
  return result;
}

}  // namespace voxdet
