#pragma once

#include <string>
#include <vector>

#include "voxdet/grid.hpp"
#include "voxdet/mesh.hpp"

namespace voxdet {

struct VoxelizeResult {
  OccupancyGrid grid;
  // Set when the exterior fill leaked through an open mesh; `grid` then
  // holds only the rasterized surface.
  bool leaked = false;
  std::vector<std::string> warnings;
};

// Solid voxelization of a normalized mesh into a k^3 grid over [-0.5,0.5]^3.
// Surface cells are those whose open cube is crossed by a triangle; the
// exterior is flood filled from outside the grid across cell-center links
// that no triangle touches, and every unreached cell is occupied.
VoxelizeResult voxelize_mesh(const TriangleMesh& mesh, int k);

// Separating-axis triangle/box test. With `open_box` the box interior is
// tested, so faces that only touch the box boundary do not count.
bool triangle_box_overlap(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extent,
                          const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                          const Eigen::Vector3d& c, bool open_box);

}  // namespace voxdet
