#include "voxdet/parallel.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <omp.h>

namespace voxdet {

void set_num_threads(int n) {
  n = std::max(1, n);
  omp_set_num_threads(n);
  Eigen::setNbThreads(n);
}

int num_threads() { return omp_get_max_threads(); }

ReferenceMode::ReferenceMode() : previous_(num_threads()) { set_num_threads(1); }
ReferenceMode::~ReferenceMode() { set_num_threads(previous_); }

}  // namespace voxdet
