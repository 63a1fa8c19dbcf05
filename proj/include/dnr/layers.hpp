// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Maskable networks g(x; theta, m): parameter slots, the layer graph, the
// desk-scale architecture zoo and channel compaction.

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "dnr/autodiff.hpp"
#include "dnr/kernels.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

enum class LayerKind { Conv, Linear, BatchNorm };
enum class ParamRole { Weight, Bias, Scale, Shift };
enum class Mode { Train, Eval };

const char* to_string(LayerKind kind);
const char* to_string(Mode mode);

/// One trainable tensor together with the sparse-training state attached to it.
template <typename T>
struct ParamSlot {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ParamRole role = ParamRole::Weight;
  bool prunable = false;
  Tensor<T> theta;     // weights
  Tensor<T> mask;      // exactly 0 or 1
  Tensor<T> dup;       // epoch-frozen copy of theta * mask
  Tensor<T> momentum;  // SGD velocity

  ParamSlot() = default;
  ParamSlot(std::string name, LayerKind kind, ParamRole role, bool prunable, Tensor<T> theta);

  /// Unmasked positions. Regrown weights count even while still exactly 0.
  std::size_t live_count() const;
  Tensor<T> masked() const;
  /// Zeroes theta wherever the mask is 0.
  void apply_mask();
};

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

inline constexpr std::size_t kNoSlot = std::numeric_limits<std::size_t>::max();

struct ConvLayer {
  std::size_t weight = kNoSlot, bias = kNoSlot;
  std::size_t stride = 1, padding = 0;
};
struct LinearLayer {
  std::size_t weight = kNoSlot, bias = kNoSlot;
};
struct BatchNormLayer {
  std::size_t scale = kNoSlot, shift = kNoSlot, state = kNoSlot;
};
struct ReluLayer {};
struct MaxPoolLayer {
  std::size_t window = 2;
};
struct GlobalAvgPoolLayer {};
struct FlattenLayer {};

struct Layer;

/// out = relu(body(x) + shortcut(x)); an empty shortcut is the identity.
struct ResidualBlock {
  std::vector<Layer> body;
  std::vector<Layer> shortcut;
};

struct Layer {
  std::variant<ConvLayer, LinearLayer, BatchNormLayer, ReluLayer, MaxPoolLayer, GlobalAvgPoolLayer,
               FlattenLayer, ResidualBlock>
      op;
};

struct ArchSpec {
  std::string name = "conv-tiny";
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 10;
  /// Linear weights join the prunable set (conv weights always do).
  bool prune_linear = false;

  bool operator==(const ArchSpec&) const = default;
};

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Parameters become requires-grad leaves; otherwise they enter as constants.
  bool trainable = false;
  /// Prunable weights participate as theta * mask. Off only for the dense baseline.
  bool masked = true;
};

/// Parameters placed on a tape: `leaves` are the requires-grad nodes
/// (invalid when not trainable), `effective` is what the layers consume.
template <typename T>
struct BoundParameters {
  std::vector<ad::Var<T>> leaves;
  std::vector<ad::Var<T>> effective;
};

template <typename T>
struct ForwardResult {
  ad::Var<T> logits;
  /// Leaf per slot when trainable, invalid Var otherwise.
  std::vector<ad::Var<T>> params;
  /// Batch statistics per batch-norm state (train mode only) and the number
  /// of values each was computed over.
  std::vector<kernels::BatchNormForward<T>> batch_stats;
  std::vector<std::size_t> batch_counts;
  /// Multiply-accumulates executed by conv and linear layers.
  std::uint64_t macs = 0;
};

class UnknownArchitecture : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
class Model {
 public:
  static constexpr T kBatchNormEps = T(1e-5);
  static constexpr T kBatchNormMomentum = T(0.1);

  Model(ArchSpec arch, std::vector<Layer> layers, std::vector<ParamSlot<T>> slots,
        std::vector<BatchNormState<T>> bn_states);

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<ParamSlot<T>>& slots() noexcept { return slots_; }
  const std::vector<ParamSlot<T>>& slots() const noexcept { return slots_; }
  ParamSlot<T>& slot(const std::string& name);
  const ParamSlot<T>& slot(const std::string& name) const;
  std::vector<BatchNormState<T>>& batchnorm_states() noexcept { return bn_; }
  const std::vector<BatchNormState<T>>& batchnorm_states() const noexcept { return bn_; }

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  /// Indices of prunable slots, in layer order.
  std::vector<std::size_t> prunable_slots() const;
  std::size_t parameter_count() const;
  Shape input_shape(std::size_t batch) const;

  BoundParameters<T> bind(ad::Tape<T>& tape, const ForwardOptions& opts) const;
  /// Forward pass over already bound parameters; several passes may share one
  /// binding so their gradients accumulate on the same leaves.
  ForwardResult<T> forward(const ad::Var<T>& x, const BoundParameters<T>& params, Mode mode) const;
  /// Masked forward pass in the requested mode. Does not touch running stats.
  ForwardResult<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ForwardOptions& opts) const;
  /// Logits for a batch in the model's current mode, without gradients.
  Tensor<T> predict(const Tensor<T>& x) const;
  /// Folds the batch statistics of a train-mode forward into the running stats.
  void update_running_stats(const ForwardResult<T>& result);
  void apply_masks();

 private:
  ArchSpec arch_;
  std::vector<Layer> layers_;
  std::vector<ParamSlot<T>> slots_;
  std::vector<BatchNormState<T>> bn_;
  Mode mode_ = Mode::Train;
};

/// Builds one of mlp-tiny, conv-tiny, vgg-mini, resnet-mini with Kaiming-uniform
/// conv/linear weights, zero biases and unit/zero batch-norm affine parameters.
template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint64_t seed);

std::vector<std::string> architecture_names();

/// Batch-norm forward for one slot pair; train mode uses and returns batch
/// statistics, eval mode the running ones.
template <typename T>
ad::Var<T> batchnorm_forward(const ad::Var<T>& x, const ad::Var<T>& scale, const ad::Var<T>& shift,
                             const BatchNormState<T>& state, Mode mode,
                             kernels::BatchNormForward<T>* batch_stats);

/// Zeroes the scale and shift of the last batch norm in every residual body so
/// each block reduces to relu(shortcut(x)).
template <typename T>
void zero_residual_branches(Model<T>& model);

/// Physically deletes conv input channels whose masked weights are all zero,
/// together with the filters (bias, batch-norm entries) that produce them.
/// Sequential models only; the image channels of the first conv are kept.
template <typename T>
Model<T> compact_channels(const Model<T>& model);

}  // namespace dnr
