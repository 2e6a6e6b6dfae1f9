#pragma once

#include <cstdint>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

// Primitive operations (forward + adjoint).  Binary elementwise ops support
// numpy-style right-aligned broadcasting of `b` into `a` (each trailing
// extent of b equals a's or is 1); the output always has a's shape.

namespace mohets {

template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);

template <typename T> TensorT<T> neg(const TensorT<T>& x);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& x, T c);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& x, T c);

template <typename T> TensorT<T> exp(const TensorT<T>& x);
template <typename T> TensorT<T> log(const TensorT<T>& x);
template <typename T> TensorT<T> sqrt(const TensorT<T>& x);
template <typename T> TensorT<T> sin(const TensorT<T>& x);
template <typename T> TensorT<T> cos(const TensorT<T>& x);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T> TensorT<T> gelu(const TensorT<T>& x);  // exact Gaussian-CDF form

// [m,k] @ [k,n] -> [m,n]
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// [B,m,k] @ [B,k,n] -> [B,m,n]
template <typename T> TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);

template <typename T> TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes);
template <typename T> TensorT<T> slice(const TensorT<T>& x, int axis, int64_t start, int64_t length);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);

template <typename T> TensorT<T> softmax_lastdim(const TensorT<T>& x);

// Normalization primitives (all bias-free, learnable scale only).
// rms_norm / layer_norm normalize each last-axis slice; group_norm1 treats x
// as [B, C, L] and normalizes each sample over all C*L values jointly
// (single-group), with a per-channel scale.
template <typename T> TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& scale, T eps);
template <typename T> TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& scale, T eps);
template <typename T> TensorT<T> group_norm1(const TensorT<T>& x, const TensorT<T>& scale, T eps);

// Per-position channel normalizations over axis 1 of [B, C, L] (used by the
// homogeneous-norm ablations at the GNorm sites).
template <typename T> TensorT<T> layer_norm_channels(const TensorT<T>& x, const TensorT<T>& scale, T eps);
template <typename T> TensorT<T> rms_norm_channels(const TensorT<T>& x, const TensorT<T>& scale, T eps);

template <typename T> TensorT<T> mean_all(const TensorT<T>& x);
template <typename T> TensorT<T> sum_all(const TensorT<T>& x);
template <typename T> TensorT<T> mean_lastdim(const TensorT<T>& x);
template <typename T> TensorT<T> var_lastdim(const TensorT<T>& x);  // population variance
template <typename T> TensorT<T> mean_axis0(const TensorT<T>& x);   // [M,N] -> [N]

// Identity when `training` is false or p == 0.
template <typename T> TensorT<T> dropout(const TensorT<T>& x, double p, Rng& rng, bool training);
// Per-sample stochastic depth over the leading axis.
template <typename T> TensorT<T> drop_path(const TensorT<T>& x, double p, Rng& rng, bool training);

// x [B,C,L], kernel [C,KW] (odd KW), zero 'same' padding.
template <typename T> TensorT<T> depthwise_conv1d(const TensorT<T>& x, const TensorT<T>& kernel);
// x [B,Cin,L], kernel [Cin,Cout] -> [B,Cout,L]
template <typename T> TensorT<T> pointwise_conv1d(const TensorT<T>& x, const TensorT<T>& kernel);
// x [B,Cin,S], kernel [Cin,Cout,P], stride = kernel width = P -> [B,Cout,S*P]
template <typename T> TensorT<T> transpose_conv1d(const TensorT<T>& x, const TensorT<T>& kernel);

// Rotary position transform on [B, H, S, Dh] (Dh even), adjacent-pair
// rotation with frequencies base^(-2j/Dh); token s gets angle (pos0+s)*freq.
template <typename T> TensorT<T> rope(const TensorT<T>& x, int64_t pos0, double base);

// Top-k selection over the last axis of [M, N]: gates keep the K largest
// scores unchanged (ties -> lowest index) and zero the rest; gradients flow
// only through the retained scores.  indices is row-major [M, K] in
// descending-score order.
template <typename T>
struct TopKResult {
  TensorT<T> gates;
  std::vector<int32_t> indices;
};
template <typename T> TopKResult<T> top_k(const TensorT<T>& scores, int64_t k);

template <typename T> TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int64_t>& idx);
// out = base; out[idx[j], :] += rows[j, :]
template <typename T> TensorT<T> index_add_rows(const TensorT<T>& base, const std::vector<int64_t>& idx, const TensorT<T>& rows);

// Mean over elements of the Huber penalty; `target` is a constant (no
// gradient path into it).
template <typename T> TensorT<T> huber_loss(const TensorT<T>& pred, const TensorT<T>& target, T delta);

// Initialization fills (not recorded on the tape).
template <typename T> void fill_xavier_uniform(TensorT<T>& t, int64_t fan_in, int64_t fan_out, Rng& rng);
template <typename T> void fill_normal(TensorT<T>& t, Rng& rng, double stddev = 1.0);
template <typename T> void fill_constant(TensorT<T>& t, T value);

}  // namespace mohets
