#include "voxdet/adam.hpp"

#include <cmath>
#include <utility>

namespace voxdet::nn {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw AutodiffError("MissingGrad");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(step_));
  const float b1 = options_.beta1, b2 = options_.beta2;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto value = params_[k].data();
    const auto grad = std::as_const(params_[k]).grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= static_cast<float>(options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (float g : std::as_const(p).grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (float& g : p.grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace voxdet::nn
