#pragma once

// Differentiable primitives. Image tensors are NCHW; "channel" ops treat any
// tensor as [N, C, rest...]. All backward rules are built from these same ops.

#include <memory>

#include "togan/autodiff.hpp"

namespace togan::ad {

enum class Resample { Up, Down };

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T c);
template <typename T> Var<T> add_const(const Var<T>& a, T c);
/// Elementwise product with a non-differentiable tensor of the same shape.
template <typename T> Var<T> mul_const(const Var<T>& a, std::shared_ptr<const Tensor<T>> m);

/// max(x, alpha*x) times gain.
template <typename T> Var<T> leaky_relu(const Var<T>& x, T alpha = T(0.2), T gain = T(1));
template <typename T> Var<T> rsqrt(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Broadcast a one-element tensor to `shape`.
template <typename T> Var<T> expand_scalar(const Var<T>& s, const Shape& shape);

/// op(a) * op(b) where op transposes when the flag is set. 2-D only.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);
/// y = x*w + b with b broadcast over rows.
template <typename T> Var<T> matmul_bias(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& b);
template <typename T> Var<T> channel_sum(const Var<T>& x);
template <typename T> Var<T> broadcast_channels(const Var<T>& b, const Shape& shape);
/// x[n,c,...] * s[n,c]
template <typename T> Var<T> mul_channels(const Var<T>& x, const Var<T>& s);
/// sum over trailing dims of a*b -> [N, C]
template <typename T> Var<T> channel_dot(const Var<T>& a, const Var<T>& b);
/// sum over trailing dims -> [N, C]
template <typename T> Var<T> spatial_sum(const Var<T>& x);
template <typename T> Var<T> expand_spatial(const Var<T>& s, const Shape& shape);

/// Cross-correlation, square odd kernel, symmetric zero padding.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad);
template <typename T> Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, int stride, int pad, int64_t in_h, int64_t in_w);
template <typename T> Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, int stride, int pad, int64_t k);

/// Up: nearest-neighbour 2x then binomial smoothing. Down: smoothing then
/// stride-2 subsample. Smoothing uses edge-replicated borders.
template <typename T> Var<T> resample2x(const Var<T>& x, Resample dir);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& xs);
template <typename T> Var<T> slice_channels(const Var<T>& x, int64_t begin, int64_t end);
template <typename T> Var<T> reshape(const Var<T>& x, const Shape& shape);

/// Each row of an N x D matrix scaled by 1/sqrt(mean(x^2) + 1e-8).
template <typename T> Var<T> normalize_2nd_moment(const Var<T>& x);

template <typename T> inline Var<T> square(const Var<T>& x) { return mul(x, x); }

/// Raw kernels shared with tests and non-differentiable code paths.
namespace kernels {
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad);
template <typename T>
Tensor<T> resample2x(const Tensor<T>& x, Resample dir);
}  // namespace kernels

}  // namespace togan::ad
