// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small hand-checked fixtures shared by the unit and acceptance tests.

#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dnr/engine.hpp"
#include "dnr/layers.hpp"

namespace dnr::testing {

struct ToySlot {
  std::string name;
  std::vector<double> theta, mask, momentum;
};

/// A model made only of prunable vector slots; it is never run forward.
inline Model<double> slot_model(const std::vector<ToySlot>& spec) {
  std::vector<ParamSlot<double>> slots;
  for (const auto& s : spec) {
    const Shape shape{s.theta.size()};
    slots.emplace_back(s.name, LayerKind::Linear, ParamRole::Weight, true, Tensor<double>(shape, s.theta));
    if (!s.mask.empty()) slots.back().mask = Tensor<double>(shape, s.mask);
    if (!s.momentum.empty()) slots.back().momentum = Tensor<double>(shape, s.momentum);
    slots.back().dup = slots.back().masked();
  }
  ArchSpec arch;
  arch.name = "toy";
  return Model<double>(arch, {}, std::move(slots), {});
}

inline SparsityState toy_state(const Model<double>& m, double p0, double p_i, int epochs) {
  SparsityState st;
  st.config.prune_rate = p0;
  st.config.total_epochs = epochs;
  st.config.density = 0.5;
  st.prune_rate = p_i;
  st.layers = m.prunable_slots();
  for (auto l : st.layers) st.total_weights += m.slots()[l].theta.numel();
  st.target_nonzeros = count_nonzeros(m);
  return st;
}

/// Three layers, 7 of 11 weights live, p_i = 0.5 so 4 weights move.
///
/// Prune (global ascending |theta|, one survivor per layer):
///   C1 0.02, B0 0.05, A1 0.1, C0 0.3 (skipped, last in C), A3 0.5
/// Momentum mass on live weights before pruning: A 0.6, B 0.2, C 0.5.
/// Regrow 4 by largest remainder: quotas 1.846, 0.615, 1.538 -> 2, 1, 1.
///   A: masked |mu| {A1 .3, A2 .8, A3 .1} -> A2, A1
///   B: masked |mu| {B0 .1, B1 .6, B3 .4} -> B1
///   C: masked |mu| {C1 .5, C2 .9}        -> C2
inline std::vector<ToySlot> toy_rewire_input() {
  return {
      {"A", {0.9, -0.1, 0.0, 0.5}, {1, 1, 0, 1}, {0.2, -0.3, 0.8, 0.1}},
      {"B", {0.05, 0.0, -0.7, 0.0}, {1, 0, 1, 0}, {0.1, 0.6, 0.1, -0.4}},
      {"C", {0.3, -0.02, 0.0}, {1, 1, 0}, {0.0, 0.5, -0.9}},
  };
}

inline std::vector<ToySlot> toy_rewire_expected() {
  return {
      {"A", {0.9, 0.0, 0.0, 0.0}, {1, 1, 1, 0}, {0.2, 0.0, 0.0, 0.1}},
      {"B", {0.0, 0.0, -0.7, 0.0}, {0, 1, 1, 0}, {0.1, 0.0, 0.1, -0.4}},
      {"C", {0.3, 0.0, 0.0}, {1, 0, 1}, {0.0, 0.5, 0.0}},
  };
}
inline constexpr double kToyP0 = 0.5;
inline constexpr int kToyEpochs = 5;
inline const std::vector<std::size_t> kToyPruned{2, 1, 1};
inline const std::vector<std::size_t> kToyRegrown{2, 1, 1};

/// Largest-remainder apportionment with exact integer arithmetic: quota
/// budget*m_i/M, remainders (budget*m_i) mod M, ties to the lowest index,
/// all-zero masses split evenly.
inline std::vector<std::size_t> apportion_exact(const std::vector<std::uint64_t>& masses, std::size_t budget) {
  std::vector<std::uint64_t> w = masses;
  std::uint64_t total = std::accumulate(w.begin(), w.end(), std::uint64_t{0});
  if (total == 0) {
    std::fill(w.begin(), w.end(), 1);
    total = w.size();
  }
  std::vector<std::size_t> seats(w.size());
  std::vector<std::uint64_t> rem(w.size());
  std::size_t given = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    seats[i] = static_cast<std::size_t>(budget * w[i] / total);
    rem[i] = budget * w[i] % total;
    given += seats[i];
  }
  while (given < budget) {
    std::size_t best = 0;
    bool found = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (rem[i] == UINT64_MAX) continue;
      if (!found || rem[i] > rem[best]) {
        best = i;
        found = true;
      }
    }
    ++seats[best];
    rem[best] = UINT64_MAX;  // one extra seat each
    ++given;
  }
  return seats;
}

/// The same rule over real masses, remainders computed in long double.
inline std::vector<std::size_t> apportion_real(const std::vector<double>& masses, std::size_t budget) {
  long double total = 0;
  for (double m : masses) total += m;
  std::vector<std::size_t> seats(masses.size());
  std::vector<long double> rem(masses.size());
  std::vector<bool> bumped(masses.size(), false);
  std::size_t given = 0;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    const long double q = total > 0 ? budget * (masses[i] / total) : (long double)budget / masses.size();
    seats[i] = static_cast<std::size_t>(std::floor(q));
    rem[i] = q - std::floor(q);
    given += seats[i];
  }
  while (given < budget) {
    std::size_t best = masses.size();
    for (std::size_t i = 0; i < masses.size(); ++i) {
      if (!bumped[i] && (best == masses.size() || rem[i] > rem[best])) best = i;
    }
    ++seats[best];
    bumped[best] = true;
    ++given;
  }
  return seats;
}

}  // namespace dnr::testing
