#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tristream/tensor.hpp"

namespace tristream {

enum class Elementwise { add, sub, mul, relu, sigmoid, tanh };

const char* to_string(Elementwise op) noexcept;

/// Applies a unary or binary elementwise op.
///
/// Binary ops need equal shapes. The only broadcast allowed is
/// scalar-vs-tensor: a rank-0 operand on either side is applied to every
/// element of the other operand.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor* b = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

double sigmoid(double x) noexcept;

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Dilated 1-D convolution kernel: weights [out, in, K], bias [out].
struct Conv1dKernel {
  Tensor weights;
  Tensor bias;
  std::size_t dilation = 1;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_size() const { return weights.dim(2); }

  /// Throws ShapeError/ConfigError when the fields are inconsistent.
  void validate() const;
};

/// y[o,t] = bias[o] + sum_{c,k} w[o,c,k] * x[c, t - d*k]; x outside [0,T) reads as 0.
/// Output length equals input length (implicit left padding (K-1)*d).
Tensor conv1d_causal(const Tensor& x, const Conv1dKernel& k);

/// Mirror of conv1d_causal: y[o,t] = bias[o] + sum_{c,k} w[o,c,k] * x[c, t + d*k].
Tensor conv1d_anticausal(const Tensor& x, const Conv1dKernel& k);

/// Per-channel causal convolution; kernels is [C, K].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, std::size_t dilation = 1);

/// out[o,t] = sum_c k[o,c] * x[c,t]
Tensor pointwise_conv1d(const Tensor& x, const Tensor& k);

/// [C,T] -> [C], mean over time.
Tensor avg_pool_time(const Tensor& x);

/// Concatenates along axis 0. Rank-2 parts must share their time extent.
Tensor concat_channels(std::span<const Tensor> parts);

/// Inverse of concat_channels given the channel extents of each part.
std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> extents);

/// Numerically stable softmax of a [K] vector.
Tensor softmax(const Tensor& logits);

/// log(sum(exp(v))) with the max subtracted first.
double log_sum_exp(std::span<const double> v);

/// out[c,t] = x[c, T-1-t]
Tensor reverse_time(const Tensor& x);

}  // namespace tristream
