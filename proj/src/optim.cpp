// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dnr {

template <typename T>
void sgd_step(std::vector<ParamSlot<T>>& slots, const std::vector<Tensor<T>>& grads, const SgdConfig& cfg) {
  if (grads.size() != slots.size()) throw std::invalid_argument("sgd_step: one gradient per slot required");
  if (!(cfg.lr > 0) || cfg.momentum < 0 || cfg.momentum >= 1 || cfg.weight_decay < 0) {
    throw std::invalid_argument("sgd_step: lr > 0, momentum in [0,1) and weight decay >= 0 required");
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (grads[s].shape() != slots[s].theta.shape()) {
      throw ShapeError("sgd_step: gradient for " + slots[s].name + " has shape " + shape_str(grads[s].shape()));
    }
    ensure_finite(grads[s], "gradient");
  }
  const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto& slot = slots[s];
    auto theta = slot.theta.data();
    auto v = slot.momentum.data();
    const auto g = grads[s].data();
    const auto m = slot.mask.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
      theta[i] = m[i] == T(0) ? T(0) : theta[i] - lr * v[i];
    }
  }
}

double lr_at_epoch(const StepSchedule& schedule, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  double lr = schedule.base_lr;
  for (int m : schedule.milestones) {
    if (m <= epoch) lr *= schedule.gamma;
  }
  return lr;
}

template void sgd_step<float>(std::vector<ParamSlot<float>>&, const std::vector<Tensor<float>>&, const SgdConfig&);
template void sgd_step<double>(std::vector<ParamSlot<double>>&, const std::vector<Tensor<double>>&,
                               const SgdConfig&);

}  // namespace dnr
