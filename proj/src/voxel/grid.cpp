#include "voxdet/grid.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "voxdet/binary_io.hpp"

namespace voxdet {

OccupancyGrid::OccupancyGrid(Dims dims, std::string label)
    : dims_(dims), cells_(dims.count(), 0), label_(std::move(label)) {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw GridError("grid dims must be positive");
}

OccupancyGrid::OccupancyGrid(Dims dims, std::vector<std::uint8_t> cells, std::string label)
    : dims_(dims), cells_(std::move(cells)), label_(std::move(label)) {
  if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw GridError("grid dims must be positive");
  if (cells_.size() != dims.count()) throw GridError("cell count does not match dims");
  for (auto& c : cells_) {
    if (c > 1) throw GridError("occupancy cells must be 0 or 1");
  }
}

std::size_t OccupancyGrid::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

bool OccupancyGrid::subset_of(const OccupancyGrid& other) const {
  if (dims_ != other.dims_) throw GridError("DimMismatch");
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (cells_[i] && !other.cells_[i]) return false;
  }
  return true;
}

OccupancyGrid OccupancyGrid::united(const OccupancyGrid& other) const {
  if (dims_ != other.dims_) throw GridError("DimMismatch");
  OccupancyGrid out(dims_, label_);
  for (std::size_t i = 0; i < cells_.size(); ++i) out.cells_[i] = cells_[i] | other.cells_[i];
  return out;
}

namespace {

// One separable max pass along an axis with a window of +-radius.
std::vector<std::uint8_t> dilate_axis(const std::vector<std::uint8_t>& in, const Dims& d, int axis,
                                      int radius) {
  std::vector<std::uint8_t> out(in.size(), 0);
  const int n = axis == 0 ? d.x : axis == 1 ? d.y : d.z;
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d.x)
                                                       : static_cast<std::size_t>(d.x) * d.y;
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const int pos = axis == 0 ? x : axis == 1 ? y : z;
        const std::size_t base = (static_cast<std::size_t>(z) * d.y + y) * d.x + x;
        const int lo = std::max(0, pos - radius);
        const int hi = std::min(n - 1, pos + radius);
        std::uint8_t v = 0;
        for (int p = lo; p <= hi && !v; ++p) {
          v = in[base + (static_cast<std::ptrdiff_t>(p) - pos) * static_cast<std::ptrdiff_t>(stride)];
        }
        out[base] = v;
      }
    }
  }
  return out;
}

}  // namespace

OccupancyGrid dilate(const OccupancyGrid& grid, int radius) {
  if (radius < 1) throw GridError("dilation radius must be >= 1");
  // The Chebyshev ball is a box, so dilation separates into three 1-D passes.
  std::vector<std::uint8_t> cells(grid.cells().begin(), grid.cells().end());
  for (int axis = 0; axis < 3; ++axis) cells = dilate_axis(cells, grid.dims(), axis, radius);
  return OccupancyGrid(grid.dims(), std::move(cells), grid.label());
}

OccupancyGrid upsample_nearest(const OccupancyGrid& grid, int factor) {
  if (factor < 1) throw GridError("upsample factor must be >= 1");
  const Dims& in = grid.dims();
  const Dims out_dims{in.x * factor, in.y * factor, in.z * factor};
  OccupancyGrid out(out_dims, grid.label());
  for (int z = 0; z < out_dims.z; ++z) {
    for (int y = 0; y < out_dims.y; ++y) {
      for (int x = 0; x < out_dims.x; ++x) {
        if (grid.at(x / factor, y / factor, z / factor)) out.set(x, y, z);
      }
    }
  }
  return out;
}

OccupancyGrid downsample_max(const OccupancyGrid& grid, int factor) {
  if (factor < 1) throw GridError("downsample factor must be >= 1");
  const Dims& in = grid.dims();
  if (in.x % factor || in.y % factor || in.z % factor) throw GridError("IndivisibleDims");
  OccupancyGrid out(Dims{in.x / factor, in.y / factor, in.z / factor}, grid.label());
  for (int z = 0; z < in.z; ++z) {
    for (int y = 0; y < in.y; ++y) {
      for (int x = 0; x < in.x; ++x) {
        if (grid.at(x, y, z)) out.set(x / factor, y / factor, z / factor);
      }
    }
  }
  return out;
}

int connected_components(const OccupancyGrid& grid) {
  const Dims& d = grid.dims();
  std::vector<std::uint8_t> seen(grid.size(), 0);
  std::vector<std::array<int, 3>> stack;
  int components = 0;
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const std::size_t i = grid.index(x, y, z);
        if (!grid[i] || seen[i]) continue;
        ++components;
        seen[i] = 1;
        stack.push_back({x, y, z});
        while (!stack.empty()) {
          auto [cx, cy, cz] = stack.back();
          stack.pop_back();
          constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
          for (const auto& o : kOffsets) {
            const int nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
            if (!grid.in_bounds(nx, ny, nz)) continue;
            const std::size_t j = grid.index(nx, ny, nz);
            if (grid[j] && !seen[j]) {
              seen[j] = 1;
              stack.push_back({nx, ny, nz});
            }
          }
        }
      }
    }
  }
  return components;
}

namespace {
constexpr char kArtvMagic[4] = {'A', 'R', 'T', 'V'};
constexpr std::uint32_t kArtvVersion = 1;
}  // namespace

std::string encode_artv(const OccupancyGrid& grid) {
  std::string out;
  out.reserve(20 + grid.size());
  out.append(kArtvMagic, 4);
  put_u32(out, kArtvVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.dims().x));
  put_u32(out, static_cast<std::uint32_t>(grid.dims().y));
  put_u32(out, static_cast<std::uint32_t>(grid.dims().z));
  out.append(reinterpret_cast<const char*>(grid.cells().data()), grid.size());
  return out;
}

OccupancyGrid decode_artv(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4) != std::string_view(kArtvMagic, 4)) throw GridError("ARTV: bad magic");
  if (in.u32() != kArtvVersion) throw GridError("ARTV: unsupported version");
  Dims d;
  d.x = static_cast<int>(in.u32());
  d.y = static_cast<int>(in.u32());
  d.z = static_cast<int>(in.u32());
  if (d.x <= 0 || d.y <= 0 || d.z <= 0 || d.count() > (std::size_t{1} << 30)) {
    throw GridError("ARTV: bad dims");
  }
  auto payload = in.take(d.count());
  if (!in.done()) throw GridError("ARTV: trailing bytes");
  std::vector<std::uint8_t> cells(payload.begin(), payload.end());
  for (auto c : cells) {
    if (c > 1) throw GridError("ARTV: cell value not 0/1");
  }
  return OccupancyGrid(d, std::move(cells));
}

void save_artv(const OccupancyGrid& grid, const std::filesystem::path& path) {
  write_file(path, encode_artv(grid));
}

OccupancyGrid load_artv(const std::filesystem::path& path) {
  auto grid = decode_artv(read_file(path));
  grid.set_label(path.stem().string());
  return grid;
}

}  // namespace voxdet
