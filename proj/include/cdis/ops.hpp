#pragma once

#include <optional>

#include "cdis/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// active GradTape when any input is tracked.
//
// Shapes: binary elementwise ops need equal shapes, or one operand with a
// single element. add_bias is the one row-broadcast operation (linear layers).
namespace cdis {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double value);
Tensor neg(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
/// Zero gradient where the input lies outside [lo, hi].
Tensor clamp(const Tensor& t, double lo, double hi);

/// Row-broadcast add: t[M x F] + bias[1 x F] (or bias[F]).
Tensor add_bias(const Tensor& t, const Tensor& bias);

Tensor sum(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);
/// Gradient flows to the first maximal element.
Tensor max(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);

Tensor reshape(const Tensor& t, Shape shape);
/// Stacks 2-D tensors with equal column counts along rows.
Tensor vstack(const Tensor& top, const Tensor& bottom);

/// Divides each row of an M x D matrix by its L2 norm.
Tensor row_l2_normalize(const Tensor& t);

/// 3x3, stride 1, zero padding 1. x: N x C x H x W, weight: O x (C*9), bias: 1 x O.
Tensor conv2d_3x3(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// 2x2 max pooling with stride 2 on N x C x H x W (H, W even).
Tensor max_pool_2x2(const Tensor& x);

}  // namespace cdis
