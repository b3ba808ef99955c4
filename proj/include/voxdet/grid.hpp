#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxdet {

struct Dims {
  int x = 0;
  int y = 0;
  int z = 0;

  constexpr std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  constexpr bool operator==(const Dims&) const = default;
  static constexpr Dims cube(int n) { return {n, n, n}; }
};

class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense binary voxel grid, x fastest then y then z. y is the vertical axis.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  explicit OccupancyGrid(Dims dims, std::string label = {});
  OccupancyGrid(Dims dims, std::vector<std::uint8_t> cells, std::string label = {});

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return cells_.size(); }
  const std::string& label() const { return label_; }
  void set_label(std::string label) { label_ = std::move(label); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_.y + y) * dims_.x + x;
  }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
  }
  bool at(int x, int y, int z) const { return cells_[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v = true) { cells_[index(x, y, z)] = v ? 1 : 0; }

  bool operator[](std::size_t i) const { return cells_[i] != 0; }
  std::span<const std::uint8_t> cells() const { return cells_; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }

  // Cell-wise relations. Both throw GridError on dims mismatch.
  bool subset_of(const OccupancyGrid& other) const;
  OccupancyGrid united(const OccupancyGrid& other) const;

  bool operator==(const OccupancyGrid& other) const {
    return dims_ == other.dims_ && cells_ == other.cells_;
  }

 private:
  Dims dims_;
  std::vector<std::uint8_t> cells_;
  std::string label_;
};

// Chebyshev (26-neighbourhood) dilation; cells beyond the border are ignored.
OccupancyGrid dilate(const OccupancyGrid& grid, int radius);

OccupancyGrid upsample_nearest(const OccupancyGrid& grid, int factor);

// Max-pool over factor^3 blocks. Throws GridError("IndivisibleDims") when
// a dimension is not a multiple of factor.
OccupancyGrid downsample_max(const OccupancyGrid& grid, int factor);

// Number of 6-connected components of occupied cells.
int connected_components(const OccupancyGrid& grid);

// ARTV: "ARTV" | u32 version=1 | u32 x | u32 y | u32 z | x*y*z bytes (0/1).
std::string encode_artv(const OccupancyGrid& grid);
OccupancyGrid decode_artv(std::string_view bytes);
void save_artv(const OccupancyGrid& grid, const std::filesystem::path& path);
OccupancyGrid load_artv(const std::filesystem::path& path);

}  // namespace voxdet
