// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum and coupled weight decay, and the step learning-rate
// schedule.

#pragma once

#include <vector>

#include "dnr/layers.hpp"

namespace dnr {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Per slot: v <- momentum*v + g + wd*theta; theta <- theta - lr*v; then
/// masked positions are set to exactly 0. The velocity lives in the slot and
/// doubles as the momentum read by rewiring. `grads` is indexed like `slots`.
template <typename T>
void sgd_step(std::vector<ParamSlot<T>>& slots, const std::vector<Tensor<T>>& grads, const SgdConfig& cfg);

struct StepSchedule {
  double base_lr = 0.1;
  std::vector<int> milestones{80, 120, 160};
  double gamma = 0.2;
};

/// base_lr * gamma^(number of milestones <= epoch).
double lr_at_epoch(const StepSchedule& schedule, int epoch);

}  // namespace dnr
