// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward/backward kernels for the network building blocks. All functions are
// pure: inputs are taken by const reference and never modified.

#pragma once

#include <cstddef>
#include <vector>

#include "dnr/tensor.hpp"

namespace dnr::kernels {

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

/// Adds bias[c] to every element of channel c of an NCHW tensor.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// Sums an NCHW tensor over N, H and W.
template <typename T> Tensor<T> channel_sum(const Tensor<T>& x);
/// Adds bias[j] to column j of a rank-2 tensor.
template <typename T> Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// Sums a rank-2 tensor over its rows.
template <typename T> Tensor<T> column_sum(const Tensor<T>& x);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index of every output element
};

/// Non-overlapping max pooling with a square window (stride == window).
/// Trailing rows/columns that do not fill a window are dropped.
template <typename T> PoolResult<T> max_pool2d(const Tensor<T>& x, std::size_t window);
template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                              const Shape& input_shape);

/// NCHW -> N x C mean over the spatial axes.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

/// Mean softmax cross-entropy of N x K logits against integer labels, computed
/// with the log-sum-exp shift. `probs` receives the softmax when non-null.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tensor<T>* probs = nullptr);
/// d(mean CE)/d(logits) = (softmax - onehot) / N.
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, const std::vector<int>& labels,
                                         T grad_out);

template <typename T>
struct BatchNormForward {
  Tensor<T> output;
  Tensor<T> normalized;  // x_hat
  Tensor<T> mean;        // per channel
  Tensor<T> inv_std;     // per channel
  Tensor<T> batch_var;   // biased batch variance, per channel
};

/// Batch normalization with batch statistics over N, H, W.
template <typename T>
BatchNormForward<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, T eps);
/// Batch normalization with fixed statistics.
template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& mean, const Tensor<T>& var, T eps);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input, gamma, beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const Tensor<T>& grad_out,
                                           const BatchNormForward<T>& fwd,
                                           const Tensor<T>& gamma);
template <typename T>
BatchNormGrads<T> batchnorm_eval_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                          const Tensor<T>& gamma, const Tensor<T>& mean,
                                          const Tensor<T>& var, T eps);

}  // namespace dnr::kernels
