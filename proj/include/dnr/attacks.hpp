// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// White-box L-infinity attacks: FGSM and PGD. Attacks read the model and never
// modify weights, masks, running statistics or optimizer state.

#pragma once

#include <random>
#include <vector>

#include "dnr/layers.hpp"

namespace dnr {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 0.01;
  int iterations = 7;
  double clip_min = 0.0;
  double clip_max = 1.0;
  bool random_start = false;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

template <typename T>
struct InputGradient {
  T loss;
  Tensor<T> grad;
};

/// Mean cross-entropy at x and its gradient with respect to x. Batch norm runs
/// in `mode`, its running statistics are left alone.
template <typename T>
InputGradient<T> input_gradient(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels,
                                Mode mode);

/// Elementwise clamp of xhat into [x - eps, x + eps].
template <typename T>
Tensor<T> project_linf(const Tensor<T>& xhat, const Tensor<T>& x, T epsilon);

template <typename T>
Tensor<T> fgsm(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels,
               const AttackConfig& cfg, Mode mode);

/// `rng` is required only when cfg.random_start is set.
template <typename T>
Tensor<T> pgd(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels, const AttackConfig& cfg,
              Mode mode, std::mt19937_64* rng = nullptr);

}  // namespace dnr
