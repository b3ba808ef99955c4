#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "voxdet/grid.hpp"

namespace voxdet {

struct AugmentParams {
  std::array<double, 3> scale_min{0.75, 0.75, 0.75};
  std::array<double, 3> scale_max{1.25, 1.25, 1.25};
  // Allowed quarter turns about the vertical (y) axis, e.g. {0,1,2,3}.
  std::vector<int> quarter_turns{0, 1, 2, 3};
  // Extra rotation drawn from [-free_angle, free_angle] degrees; 0 disables it.
  double free_angle_deg = 0.0;
  int merge_min = 1;
  int merge_max = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// One source placement inside an augmented grid.
struct Placement {
  std::size_t source = 0;
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  int quarter_turns = 0;
  double free_angle_deg = 0.0;
};

// Draws the placements for one augmented sample.
std::vector<Placement> draw_placements(std::size_t source_count, const AugmentParams& params);

// Scales and rotates `grid` about its center by nearest-neighbour inverse
// mapping; samples that land outside the source are empty.
OccupancyGrid transform_grid(const OccupancyGrid& grid, const Placement& placement);

// Union of the placed sources. Throws GridError("EmptyResult") when nothing survives.
OccupancyGrid apply_placements(const std::vector<OccupancyGrid>& sources,
                               const std::vector<Placement>& placements);

OccupancyGrid augment(const std::vector<OccupancyGrid>& sources, const AugmentParams& params);

}  // namespace voxdet
