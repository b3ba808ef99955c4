#include "voxdet/ops.hpp"

#include <cmath>

namespace voxdet::nn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw AutodiffError(std::string("ShapeMismatch in ") + op + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i] && n.inputs[i]->requires_grad; }

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto in = a.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& n) {
    const auto& x = n.inputs[0]->data;
    auto& gx = n.inputs[0]->grad;
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += n.grad[i] * deriv(x[i], n.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      auto& g = n.inputs[k]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) {
      auto& g = n.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& g = n.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& x = n.inputs[0]->data;
    const auto& y = n.inputs[1]->data;
    if (wants(n, 0)) {
      auto& g = n.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i];
    }
    if (wants(n, 1)) {
      auto& g = n.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    auto& g = n.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_result({}, {static_cast<float>(acc)}, {a}, [](Node& n) {
    auto& g = n.inputs[0]->grad;
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto count = static_cast<double>(a.numel());
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_result({}, {static_cast<float>(acc / count)}, {a}, [count](Node& n) {
    auto& g = n.inputs[0]->grad;
    const float share = static_cast<float>(n.grad[0] / count);
    for (auto& v : g) v += share;
  });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a,
      [](float x) {
        // log(1+e^x) = max(x,0) + log1p(e^-|x|), stable for both tails.
        return std::max(x, 0.0f) + std::log1p(std::exp(-std::abs(x)));
      },
      [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](float x) {
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        const float e = std::exp(x);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor leaky_relu(const Tensor& a, float negative_slope) {
  return unary(
      a, [negative_slope](float x) { return x > 0.0f ? x : negative_slope * x; },
      [negative_slope](float x, float) { return x > 0.0f ? 1.0f : negative_slope; });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const auto x = a.data(), y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  const auto count = static_cast<double>(x.size());
  return make_result({}, {static_cast<float>(acc / count)}, {a, b}, [count](Node& n) {
    const auto& x = n.inputs[0]->data;
    const auto& y = n.inputs[1]->data;
    const double c = 2.0 * n.grad[0] / count;
    if (wants(n, 0)) {
      auto& g = n.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(c * (x[i] - y[i]));
    }
    if (wants(n, 1)) {
      auto& g = n.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= static_cast<float>(c * (x[i] - y[i]));
    }
  });
}

Tensor stop_gradient(const Tensor& a) {
  // A fresh leaf: nothing upstream of it is reachable from the tape.
  return Tensor::from(a.shape(), std::vector<float>(a.data().begin(), a.data().end()), false);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw AutodiffError("ShapeMismatch in reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return make_result(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()), {a}, [](Node& n) {
    auto& g = n.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::int64_t start, std::int64_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start < 0 || length <= 0 || start + length > s[axis]) {
    throw AutodiffError("narrow: range out of bounds for " + shape_string(s));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<float> out(static_cast<std::size_t>(outer * length * inner));
  const auto x = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < length; ++j) {
      const auto src = (o * full + start + j) * inner;
      const auto dst = (o * length + j) * inner;
      std::copy_n(x.begin() + src, inner, out.begin() + dst);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [outer, inner, full, start, length](Node& n) {
                       auto& g = n.inputs[0]->grad;
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t j = 0; j < length; ++j) {
                           const auto src = (o * full + start + j) * inner;
                           const auto dst = (o * length + j) * inner;
                           for (std::int64_t i = 0; i < inner; ++i) g[src + i] += n.grad[dst + i];
                         }
                       }
                     });
}

}  // namespace voxdet::nn
