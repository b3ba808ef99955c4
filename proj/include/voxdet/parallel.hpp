#pragma once

#include <cstdint>

namespace voxdet {

// Worker count for OpenMP regions and Eigen GEMM. 1 is the bit-reproducible
// reference mode; results of kernels that reduce across threads are
// only guaranteed identical between runs with the same count.
void set_num_threads(int n);
int num_threads();

// Scoped switch to single-threaded execution.
class ReferenceMode {
 public:
  ReferenceMode();
  ~ReferenceMode();
  ReferenceMode(const ReferenceMode&) = delete;
  ReferenceMode& operator=(const ReferenceMode&) = delete;

 private:
  int previous_;
};

}  // namespace voxdet
