#pragma once

#include <vector>

#include "voxdet/tensor.hpp"

namespace voxdet::nn {

struct AdamOptions {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam. step() leaves gradients in place; callers zero them.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Throws AutodiffError("MissingGrad") if a parameter has no gradient buffer.
  void step();
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment buffers, one per parameter, for checkpointing.
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  void set_step_count(std::int64_t step) { step_ = step; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_ = 0;
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace voxdet::nn
