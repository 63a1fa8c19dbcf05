// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and its flat "key = value" text form.
//
//   # comment
//   density = 0.1
//   train_eps = 8/255        # fractions are accepted for reals
//   milestones = 80,120,160
//
// Unknown keys, duplicate keys and malformed values are errors.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dnr/attacks.hpp"
#include "dnr/engine.hpp"
#include "dnr/optim.hpp"

namespace dnr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TrainMode { Dnr, Dense };
enum class Precision { Float32, Float64 };

struct ExperimentConfig {
  std::string arch = "conv-tiny";
  bool prune_linear = false;
  std::string dataset = "mnist";  // mnist | cifar10 | synth
  std::string data_dir = "data/mnist-5k";
  std::size_t train_subset = 0;  // 0 keeps every sample
  std::size_t test_subset = 0;
  std::size_t synth_classes = 10;
  std::size_t synth_train = 1000;
  std::size_t synth_test = 200;
  std::size_t synth_size = 12;
  std::size_t synth_channels = 1;
  double synth_spread = 0.15;
  bool augment = false;

  TrainMode mode = TrainMode::Dnr;
  double density = 0.1;
  PruneType prune_type = PruneType::Irregular;
  double prune_rate = 0.5;
  MomentumContribution momentum_contribution = MomentumContribution::Sum;
  MaskInit init_mask = MaskInit::Magnitude;

  double beta = 0.5;
  double rho = 1e-4;
  int warmup_epochs = 5;

  int epochs = 200;
  std::size_t batch_size = 128;
  double lr = 0.1;
  std::vector<int> milestones{80, 120, 160};
  double lr_gamma = 0.2;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  double train_eps = 8.0 / 255.0;
  double train_alpha = 0.01;
  int train_iters = 7;
  bool train_random_start = false;
  double eval_eps = 8.0 / 255.0;
  double eval_alpha = 0.01;
  int eval_iters = 7;
  double fgsm_eps = 8.0 / 255.0;
  Mode attack_bn_mode = Mode::Train;
  int eval_every = 1;  // robust evaluation cadence in epochs; the last epoch is always evaluated

  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  Precision precision = Precision::Float32;

  bool operator==(const ExperimentConfig&) const = default;

  /// Range checks across fields; throws ConfigError.
  void validate() const;

  SparsityConfig sparsity() const;
  HybridLossConfig loss() const;
  SgdConfig sgd() const;
  StepSchedule schedule() const;
  AttackConfig train_attack() const;
  AttackConfig eval_attack() const;
  AttackConfig fgsm_attack() const;
};

/// Every recognised key, in file order.
const std::vector<std::string>& config_keys();
/// One-line description with units, for --help and the config file.
std::string config_key_help(const std::string& key);

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// Real number, optionally written as a fraction "a/b".
double parse_real(std::string_view text);

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
/// Canonical text; parse_config(to_config_text(c)) == c.
std::string to_config_text(const ExperimentConfig& cfg);

}  // namespace dnr
