#pragma once

#include <cstddef>
#include <span>

#include "ccnet/tensor.hpp"

// Differentiable primitives. Every op validates its shape rule and throws
// ConfigError on mismatch; outputs are checked for finiteness.
namespace ccnet::ops {

// input [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout]; stride 1, zero padding.
// Output [N,Cout,H+2p-k+1,W+2p-k+1].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding);

// input [N,In] (or [In]), weight [Out,In], bias [Out] -> [N,Out] (or [Out]).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Subgradient at 0 is 0.
Tensor relu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double s);

// Elementwise product with `scale` broadcast along the last axis:
// scale has shape [x.extent(last)].
Tensor scale(const Tensor& x, const Tensor& scale);

// Non-overlapping window x window max pooling over [N,C,H,W]; trailing
// rows/columns that do not fill a window are dropped.
Tensor max_pool2d(const Tensor& x, std::size_t window);

// [N,C,H,W] -> [N,C], mean over the spatial extent.
Tensor global_avg_pool(const Tensor& x);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

// Along the last axis: x_k / sum_j x_j. Throws NumericError when a row sum
// is not strictly positive.
Tensor sum_normalize(const Tensor& x);

// log(max(x, floor)); entries below the floor receive zero gradient.
Tensor log(const Tensor& x, double floor = 0.0);

// Same values under a new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);

// Sum of all entries -> scalar.
Tensor sum(const Tensor& x);

// x [N,C], index[n] < C -> [N] with out[n] = x[n, index[n]].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

// Scalar sum_i weight[i] * x[i] over the flattened tensor.
Tensor weighted_sum(const Tensor& x, std::span<const double> weight);

}  // namespace ccnet::ops
