#pragma once

#include <cstdint>
#include <vector>

#include "voxdet/grid.hpp"
#include "voxdet/rng.hpp"

namespace voxdet::testing {

inline OccupancyGrid random_grid(Rng& rng, Dims dims, double fill = 0.3) {
  std::vector<std::uint8_t> cells(dims.count());
  for (auto& c : cells) c = rng.uniform() < fill ? 1 : 0;
  return OccupancyGrid(dims, std::move(cells));
}

// Chebyshev dilation by direct enumeration of the ball around every cell.
inline OccupancyGrid brute_force_dilate(const OccupancyGrid& g, int r) {
  const Dims& d = g.dims();
  OccupancyGrid out(d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x)
        for (int dz = -r; dz <= r; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
              if (g.in_bounds(x + dx, y + dy, z + dz) && g.at(x + dx, y + dy, z + dz)) out.set(x, y, z);
  return out;
}

}  // namespace voxdet::testing
