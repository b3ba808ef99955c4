#pragma once

#include "voxdet/tensor.hpp"

namespace voxdet::nn {

// Elementwise binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float negative_slope = 0.01f);

// Mean of (a - b)^2 over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// Identity forward, zero backward.
Tensor stop_gradient(const Tensor& a);

// Same storage order, new shape.
Tensor reshape(const Tensor& a, Shape shape);

// Sub-range [start, start+length) along `axis`.
Tensor narrow(const Tensor& a, std::size_t axis, std::int64_t start, std::int64_t length);

}  // namespace voxdet::nn
