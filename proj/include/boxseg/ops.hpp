#pragma once

#include <cstdint>
#include <span>

#include "boxseg/graph.hpp"
#include "boxseg/kernels.hpp"

// Differentiable ops over Graph nodes. Each op validates its inputs, runs the
// matching eager kernel and records the vector-Jacobian product.
namespace boxseg::ops {

Var conv2d(Var x, Var kernel, Var bias, kernels::ConvGeometry geo);
Var relu(Var x);
Var sigmoid(Var x);
Var softmax(Var x);
Var mul(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var x, double factor);
Var resize_nearest(Var x, std::size_t out_h, std::size_t out_w);
Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t begin, std::size_t end);
Var sum(Var x);
// sum(weights * x) for a constant weight tensor of identical dims.
Var weighted_sum(Var x, const Tensor& weights);

// A copy of x's value that carries no gradient path.
Var detach(Var x);

// -sum q * log softmax(logits) / normalizer. q is a constant target: no
// gradient is ever routed into it.
Var soft_cross_entropy(const Tensor& q, Var logits, double normalizer = 1.0);

// -sum log softmax(logits)[label] / normalizer over every pixel, with labels
// holding one class index per pixel in N*H*W order.
Var neg_log_likelihood(Var logits, std::span<const std::uint8_t> labels,
                       double normalizer = 1.0);

}  // namespace boxseg::ops
