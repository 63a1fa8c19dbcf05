// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: the training loop, evaluation, sensitivity scans
// and attack-strength sweeps, plus their CSV outputs.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dnr/attacks.hpp"
#include "dnr/config.hpp"
#include "dnr/data.hpp"
#include "dnr/engine.hpp"
#include "dnr/layers.hpp"

namespace dnr {

/// Four independent streams derived from the global seed.
struct RngStreams {
  std::uint64_t init = 0, shuffle = 0, augment = 0, attack = 0;
  static RngStreams from_seed(std::uint64_t seed);
};

struct DataBundle {
  Dataset train;
  Dataset test;
};

/// Loads (or synthesizes) both splits and applies the subset limits.
DataBundle load_datasets(const ExperimentConfig& cfg);

ArchSpec arch_for(const ExperimentConfig& cfg, const Dataset& ds);

struct EvalMetrics {
  double clean = 0.0;
  std::optional<double> fgsm;
  std::optional<double> pgd;
  std::size_t samples = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double prune_rate = 0.0;
  double loss = 0.0;  // mean training loss
  EvalMetrics eval;
  double compression = 1.0;
  double channels_present = 1.0;
  std::size_t nonzeros = 0;
};

template <typename T>
struct TrainingObserver {
  std::function<void(int epoch, const Model<T>&)> on_epoch_start;
  std::function<void(int epoch, const ad::Tape<T>&, const HybridLoss<T>&)> on_batch;
  std::function<void(const RewireReport&, const Model<T>&, const SparsityState&)> on_rewire;
};

template <typename T>
struct TrainingResult {
  Model<T> model;
  std::vector<EpochMetrics> history;
  std::optional<EpochMetrics> best;  // highest clean accuracy
  std::vector<RewireReport> rewires;
};

/// Full training run. Writes config.txt, metrics.csv, rewire.csv,
/// summary.json and model.ckpt into cfg.output_dir unless it is empty.
/// Throws NumericalError on a non-finite loss after dumping diagnostics.
template <typename T>
TrainingResult<T> run_training(const ExperimentConfig& cfg, const DataBundle& data,
                               const TrainingObserver<T>& observer = {});

/// Accuracy in eval mode; the attacks are skipped when null.
template <typename T>
EvalMetrics evaluate(const Model<T>& model, const Dataset& test, const AttackConfig* fgsm_cfg,
                     const AttackConfig* pgd_cfg, std::size_t batch_size, std::uint64_t attack_seed);

/// Eval-mode accuracy of a batch of logits against labels.
template <typename T>
std::size_t correct_predictions(const Tensor<T>& logits, const std::vector<int>& labels);

struct SensitivityRow {
  std::string layer;
  std::size_t pruned = 0;
  double clean_base = 0, clean_pruned = 0;
  double pgd_base = 0, pgd_pruned = 0;
  double clean_drop() const { return clean_base - clean_pruned; }
  double pgd_drop() const { return pgd_base - pgd_pruned; }
};

/// Prunes `percent` of each prunable layer's live weights by magnitude in
/// turn, measures clean and PGD accuracy, and restores the layer.
template <typename T>
std::vector<SensitivityRow> sensitivity_scan(Model<T>& model, const Dataset& test, double percent,
                                             const AttackConfig& pgd_cfg, std::size_t batch_size,
                                             std::uint64_t attack_seed);

struct SweepRow {
  int iterations = 1;
  double epsilon = 0;
  double alpha = 0;
  double accuracy = 0;
};

/// PGD accuracy over iterations x epsilons. alpha <= 0 selects 2.5*eps/k.
template <typename T>
std::vector<SweepRow> attack_sweep(const Model<T>& model, const Dataset& test, const std::vector<int>& iterations,
                                   const std::vector<double>& epsilons, double alpha, std::size_t batch_size,
                                   std::uint64_t attack_seed);

std::string format_real(double v);

extern const char* const kMetricsHeader;
void write_metrics_row(std::ostream& os, const EpochMetrics& m);
void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityRow>& rows);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace dnr
