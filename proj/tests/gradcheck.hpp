#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "voxdet/ops.hpp"
#include "voxdet/rng.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet::testing {

// Central finite differences against the tape. The probed loss is the
// projection sum(w * f()) with fixed random w. The numeric side evaluates
// `reference(w)` when given: an independent double-precision forward that
// reads the current parameter values. Without it the f32 forward is used,
// which is only accurate enough for ops whose outputs do not mix.
struct GradCheck {
  int probed = 0;
  int skipped = 0;  // probes redrawn because the step straddled a kink
  int passed = 0;
  double worst = 0.0;
  double pass_fraction() const { return probed ? static_cast<double>(passed) / probed : 0.0; }
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

inline std::vector<float> random_weights(Rng& rng, std::int64_t n) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return w;
}

inline double projected(const nn::Tensor& out, const std::vector<float>& w) {
  double acc = 0.0;
  const auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<double>(w[i]) * d[i];
  return acc;
}

// `f` rebuilds the output from the current parameter values.
using Reference = std::function<double(const std::vector<float>& w)>;
// Called after the two evaluations of a probe; true when the +h and -h points
// lie on different linear pieces of a piecewise op, so the probe is redrawn.
using Straddle = std::function<bool()>;

inline GradCheck check_gradients(const std::function<nn::Tensor()>& f, std::vector<nn::Tensor> params,
                                 int probes, Rng& rng, const Reference& reference = {}, double h = 1e-3,
                                 double tol = 1e-3, const Straddle& straddled = {}) {
  const nn::Tensor first = f();
  const auto w = random_weights(rng, first.numel());
  for (auto& p : params) p.zero_grad();
  nn::backward(nn::sum(nn::mul(first, nn::Tensor::from(first.shape(), w))));

  std::int64_t total = 0;
  for (auto& p : params) total += p.numel();
  GradCheck result;
  nn::NoGradGuard no_grad;
  const Reference eval = reference ? reference : Reference([&](const std::vector<float>& wv) { return projected(f(), wv); });
  for (int attempt = 0; result.probed < probes && attempt < 50 * probes; ++attempt) {
    auto flat = rng.uniform_int(0, total - 1);
    std::size_t which = 0;
    while (flat >= params[which].numel()) flat -= params[which++].numel();
    auto& p = params[which];
    const auto i = static_cast<std::size_t>(flat);
    const float original = p.data()[i];
    // Divide by the step actually representable in f32.
    const float hi = original + static_cast<float>(h);
    const float lo = original - static_cast<float>(h);
    p.data()[i] = hi;
    const double up = eval(w);
    p.data()[i] = lo;
    const double down = eval(w);
    p.data()[i] = original;
    if (straddled && straddled()) {
      ++result.skipped;
      continue;
    }
    const double numeric = (up - down) / (static_cast<double>(hi) - lo);
    const double err = relative_error(p.grad()[i], numeric);
    result.worst = std::max(result.worst, err);
    ++result.probed;
    if (err < tol) ++result.passed;
  }
  return result;
}

}  // namespace voxdet::testing
