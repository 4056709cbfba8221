// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Binary elementwise ops broadcast
// numpy-style, but only over axes of size 1 (missing leading axes count as 1).

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gret/tensor.hpp"

namespace gret::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sqrt(const Tensor& a);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [b,m,k] x [b,k,n] -> [b,m,n]
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Rows of table[V, d] selected by ids -> [ids.size(), d].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace gret::ops
