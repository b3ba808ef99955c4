#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace voxdet {

struct TriangleMesh {
  std::vector<Eigen::Vector3f> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  // Optional per-vertex RGB in [0,1]; either empty or one entry per vertex.
  std::vector<Eigen::Vector3f> colors;

  bool has_colors() const { return !colors.empty(); }
  bool empty() const { return triangles.empty(); }

  // Throws std::invalid_argument on out-of-range indices or a color count mismatch.
  void validate() const;

  // Centers the bounding box at the origin and scales the largest extent to 1.
  void normalize();

  // Number of edges used by other than exactly two triangles.
  std::size_t open_edge_count() const;
};

// ASCII OBJ reader: "v x y z [r g b]" and "f" records, polygons fan-triangulated.
// Face tokens may be "i", "i/t", "i//n" or "i/t/n"; negative indices are relative.
TriangleMesh parse_obj(std::string_view text);
TriangleMesh load_obj(const std::filesystem::path& path);

}  // namespace voxdet
