// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/attacks.hpp"

#include <cmath>
#include <stdexcept>

namespace dnr {

void AttackConfig::validate() const {
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack epsilon must be >= 0");
  if (!(alpha > 0) || !std::isfinite(alpha)) throw std::invalid_argument("attack alpha must be > 0");
  if (iterations < 1) throw std::invalid_argument("attack iterations must be >= 1");
  if (!(clip_min < clip_max)) throw std::invalid_argument("attack clip range must satisfy min < max");
}

template <typename T>
InputGradient<T> input_gradient(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels,
                                Mode mode) {
  ad::Tape<T> tape;
  auto input = tape.leaf(x, "input");
  ForwardOptions opts;
  opts.mode = mode;
  auto out = model.forward(tape, input, opts);
  auto loss = ad::softmax_cross_entropy(out.logits, labels);
  InputGradient<T> r{loss.value().item(), tape.grad_wrt_input(loss, input)};
  ensure_finite(r.grad, "attack input gradient");
  return r;
}

template <typename T>
Tensor<T> project_linf(const Tensor<T>& xhat, const Tensor<T>& x, T epsilon) {
  if (xhat.shape() != x.shape()) throw ShapeError("project_linf: shape mismatch");
  Tensor<T> out = xhat;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T lo = x[i] - epsilon, hi = x[i] + epsilon;
    out[i] = out[i] < lo ? lo : (out[i] > hi ? hi : out[i]);
  }
  return out;
}

namespace {

template <typename T>
void clamp_range(Tensor<T>& t, T lo, T hi) {
  for (auto& v : t.data()) v = v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace

template <typename T>
Tensor<T> fgsm(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels,
               const AttackConfig& cfg, Mode mode) {
  cfg.validate();
  const T eps = static_cast<T>(cfg.epsilon);
  if (eps == T(0)) return x;
  const auto g = input_gradient(model, x, labels, mode);
  const Tensor<T> s = sign(g.grad);
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + eps * s[i];
  clamp_range(out, static_cast<T>(cfg.clip_min), static_cast<T>(cfg.clip_max));
  return out;
}

template <typename T>
Tensor<T> pgd(const Model<T>& model, const Tensor<T>& x, const std::vector<int>& labels, const AttackConfig& cfg,
              Mode mode, std::mt19937_64* rng) {
  cfg.validate();
  const T eps = static_cast<T>(cfg.epsilon), alpha = static_cast<T>(cfg.alpha);
  const T lo = static_cast<T>(cfg.clip_min), hi = static_cast<T>(cfg.clip_max);
  if (eps == T(0)) return x;
  Tensor<T> xhat = x;
  if (cfg.random_start) {
    if (!rng) throw std::invalid_argument("pgd: random start needs an rng");
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (auto& v : xhat.data()) v += static_cast<T>(u(*rng));
    xhat = project_linf(xhat, x, eps);
    clamp_range(xhat, lo, hi);
  }
  for (int k = 0; k < cfg.iterations; ++k) {
    const auto g = input_gradient(model, xhat, labels, mode);
    const Tensor<T> s = sign(g.grad);
    for (std::size_t i = 0; i < xhat.numel(); ++i) xhat[i] = xhat[i] + alpha * s[i];
    xhat = project_linf(xhat, x, eps);
    clamp_range(xhat, lo, hi);
  }
  return xhat;
}

#define DNR_INSTANTIATE_ATTACKS(T)                                                                             \
  template InputGradient<T> input_gradient<T>(const Model<T>&, const Tensor<T>&, const std::vector<int>&, Mode); \
  template Tensor<T> project_linf<T>(const Tensor<T>&, const Tensor<T>&, T);                                     \
  template Tensor<T> fgsm<T>(const Model<T>&, const Tensor<T>&, const std::vector<int>&, const AttackConfig&,     \
                             Mode);                                                                              \
  template Tensor<T> pgd<T>(const Model<T>&, const Tensor<T>&, const std::vector<int>&, const AttackConfig&,      \
                            Mode, std::mt19937_64*);

DNR_INSTANTIATE_ATTACKS(float)
DNR_INSTANTIATE_ATTACKS(double)

}  // namespace dnr
