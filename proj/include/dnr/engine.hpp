// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse adversarial training engine: the hybrid loss with its dynamic L2
// regularizer, mask initialization, and the per-epoch prune/regrow rewiring
// for irregular (per weight) and channel (per input-channel slice) sparsity.
//
// Counting convention: a weight is "live" when its mask is 1. Regrown
// weights start at exactly 0 and are live from the moment they are regrown.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnr/layers.hpp"

namespace dnr {

enum class PruneType { Irregular, Channel };
enum class MomentumContribution { Sum, Mean };
enum class MaskInit { Magnitude, Random };

const char* to_string(PruneType type);
const char* to_string(MomentumContribution c);
const char* to_string(MaskInit init);

struct SparsityConfig {
  double density = 1.0;
  PruneType prune_type = PruneType::Irregular;
  /// Initial pruning rate p0; decays linearly to 0 over total_epochs.
  double prune_rate = 0.5;
  int total_epochs = 1;
  MomentumContribution contribution = MomentumContribution::Sum;
  MaskInit init = MaskInit::Magnitude;

  void validate() const;
};

struct SparsityState {
  SparsityConfig config;
  int epoch = 0;               // rewires performed so far
  double prune_rate = 0.0;     // p_i for the next rewire
  std::size_t target_nonzeros = 0;
  std::size_t total_weights = 0;
  std::vector<std::size_t> layers;  // prunable slot indices
};

/// Per-epoch record written to the rewire log.
struct RewireReport {
  int epoch = 0;
  double prune_rate = 0.0;
  std::size_t pruned = 0;   // weights
  std::size_t regrown = 0;  // weights
  std::vector<std::string> names;
  std::vector<std::size_t> nonzeros;
  std::vector<double> shares;
  std::vector<std::size_t> layer_pruned;
  std::vector<std::size_t> layer_regrown;
  double compression = 1.0;
  double channels_present = 1.0;
};

class ConservationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Creates the initial masks and zeroes masked weights. Irregular: the
/// largest-magnitude weights of every layer, with per-layer counts
/// apportioned from d*card so the global count is exactly round(d*total).
/// Channel: the ceil(d*N) highest-importance input channels of every layer.
/// `rng` is needed for MaskInit::Random only.
template <typename T>
SparsityState init_masks(Model<T>& model, const SparsityConfig& cfg, std::mt19937_64* rng = nullptr);

/// Live weights over the prunable slots.
template <typename T>
std::size_t count_nonzeros(const Model<T>& model);

/// z <- theta * mask for every slot.
template <typename T>
void update_duplicates(Model<T>& model);

/// sum_l ||theta_l * m_l - z_l||^2 over the prunable slots, without rho/2.
template <typename T>
T regularizer_value(const Model<T>& model);

struct HybridLossConfig {
  double beta = 0.5;
  double rho = 1e-4;
  int warmup_epochs = 5;

  void validate() const;
  /// The adversarial forward pass (and the attack feeding it) is needed.
  bool needs_adversarial(bool warmup) const { return !warmup && beta < 1.0; }
};

template <typename T>
struct HybridLoss {
  ad::Var<T> total;
  ForwardResult<T> clean;
  T clean_ce = 0;
  T adversarial_ce = 0;
  T regularizer = 0;  // sum of squared drifts, before rho/2
};

/// beta*(CE(x) + rho/2 * sum ||theta*m - z||^2) + (1 - beta)*CE(xhat), or the
/// clean cross-entropy alone during warm-up. The adversarial pass is recorded
/// under the tape scope "adversarial" and is absent when beta == 1; the
/// regularizer is absent when rho == 0.
template <typename T>
HybridLoss<T> hybrid_loss(const Model<T>& model, ad::Tape<T>& tape, const BoundParameters<T>& params,
                          const Tensor<T>& x, const std::vector<int>& labels, const Tensor<T>* xhat,
                          const HybridLossConfig& cfg, bool warmup, Mode mode);

/// Masks the `count` smallest-magnitude live weights (ties: lowest index).
/// Throws when fewer than count + floor weights are live.
template <typename T>
void prune_irregular(ParamSlot<T>& slot, std::size_t count, std::size_t floor = 1);

/// Unmasks up to `count` masked positions with the largest |momentum| (ties:
/// lowest index), setting weight and velocity to 0. Returns how many were
/// regrown; the shortfall is count minus that.
template <typename T>
std::size_t regrow_irregular(ParamSlot<T>& slot, std::size_t count);

/// Squared Frobenius norm of every input-channel slice theta[:, c, :, :].
template <typename T>
std::vector<T> channel_importance(const ParamSlot<T>& slot);

/// Channels with at least one unmasked weight.
template <typename T>
std::size_t live_channels(const ParamSlot<T>& slot);

/// Masks the `count` live channels of lowest importance, always leaving one
/// live. Returns the number pruned.
template <typename T>
std::size_t prune_channels(ParamSlot<T>& slot, std::size_t count);

/// Unmasks up to `count` dead channels with the largest momentum Frobenius
/// norm, weights and velocity 0. Returns the number regrown.
template <typename T>
std::size_t regrow_channels(ParamSlot<T>& slot, std::size_t count);

/// Splits `budget` in proportion to `masses` by largest remainder (ties:
/// lowest index). With `capacity`, a layer's excess goes to the
/// highest-share layers that still have room. All-zero masses split
/// uniformly.
std::vector<std::size_t> momentum_redistribution(std::span<const double> masses, std::size_t budget,
                                                 std::span<const std::size_t> capacity = {});

/// L1 mass of the momentum on live positions, per listed slot; the mean
/// variant divides by the live count.
template <typename T>
std::vector<double> momentum_masses(const Model<T>& model, const std::vector<std::size_t>& layers,
                                    MomentumContribution contribution);

/// End-of-epoch prune, decay, redistribute, regrow, re-mask and z refresh.
/// Throws ConservationError if the live count changes.
template <typename T>
RewireReport epoch_rewire(Model<T>& model, SparsityState& state);

/// Prunable weights over live prunable weights.
template <typename T>
double compression_ratio(const Model<T>& model);

/// Live input channels over all input channels of the prunable slots.
template <typename T>
double channels_present(const Model<T>& model);

void write_rewire_header(std::ostream& os, const std::vector<std::string>& layer_names);
void write_rewire_row(std::ostream& os, const RewireReport& report);

}  // namespace dnr
