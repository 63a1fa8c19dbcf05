// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/experiment.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dnr/checkpoint.hpp"
#include "dnr/optim.hpp"
#include "json.hpp"

namespace dnr {

namespace fs = std::filesystem;

RngStreams RngStreams::from_seed(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32)};
  std::uint32_t words[8];
  seq.generate(words, words + 8);
  auto join = [&](int i) { return std::uint64_t(words[2 * i]) << 32 | words[2 * i + 1]; };
  return {join(0), join(1), join(2), join(3)};
}

DataBundle load_datasets(const ExperimentConfig& cfg) {
  DataBundle b;
  if (cfg.dataset == "mnist") {
    b.train = load_mnist_idx(cfg.data_dir, Split::Train);
    b.test = load_mnist_idx(cfg.data_dir, Split::Test);
  } else if (cfg.dataset == "cifar10") {
    b.train = load_cifar10(cfg.data_dir, Split::Train);
    b.test = load_cifar10(cfg.data_dir, Split::Test);
  } else if (cfg.dataset == "synth") {
    BlobSpec spec;
    spec.classes = cfg.synth_classes;
    spec.channels = cfg.synth_channels;
    spec.height = spec.width = cfg.synth_size;
    spec.spread = cfg.synth_spread;
    spec.samples = cfg.synth_train;
    b.train = synth_blobs(spec, cfg.seed, Split::Train);
    spec.samples = cfg.synth_test;
    b.test = synth_blobs(spec, cfg.seed, Split::Test);
  } else {
    throw ConfigError("unknown dataset '" + cfg.dataset + "'");
  }
  if (cfg.train_subset > 0) b.train = take_first(b.train, cfg.train_subset);
  if (cfg.test_subset > 0) b.test = take_first(b.test, cfg.test_subset);
  b.train.validate();
  b.test.validate();
  return b;
}

ArchSpec arch_for(const ExperimentConfig& cfg, const Dataset& ds) {
  ArchSpec a;
  a.name = cfg.arch;
  a.in_channels = ds.channels();
  a.height = ds.height();
  a.width = ds.width();
  a.num_classes = ds.num_classes;
  a.prune_linear = cfg.prune_linear;
  return a;
}

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::size_t correct_predictions(const Tensor<T>& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += static_cast<int>(pred[i]) == labels.at(i);
  return n;
}

namespace {

template <typename T>
Tensor<T> eval_logits(const Model<T>& model, const Tensor<T>& x) {
  ad::Tape<T> tape;
  ForwardOptions opts;
  opts.mode = Mode::Eval;
  return model.forward(tape, tape.constant(x, "input"), opts).logits.value();
}

template <typename T>
Batch<T> augmented(const Batch<T>& b, std::mt19937_64& rng) {
  Batch<T> out = b;
  if constexpr (std::is_same_v<T, float>) {
    out.x = augment(b.x, rng);
  } else {
    out.x = augment(b.x.template cast<float>(), rng).template cast<T>();
  }
  return out;
}

template <typename T>
std::string describe_batch(const HybridLoss<T>& hl) {
  std::ostringstream os;
  os << "  clean_ce " << hl.clean_ce << ", adversarial_ce " << hl.adversarial_ce << ", regularizer "
     << hl.regularizer << '\n';
  for (std::size_t i = 0; i < hl.clean.batch_stats.size(); ++i) {
    const auto& st = hl.clean.batch_stats[i];
    if (st.mean.empty()) continue;
    os << "  bn" << i << " max|mean| " << max_abs(st.mean) << ", max var " << max_abs(st.batch_var) << '\n';
  }
  return os.str();
}

}  // namespace

template <typename T>
EvalMetrics evaluate(const Model<T>& model, const Dataset& test, const AttackConfig* fgsm_cfg,
                     const AttackConfig* pgd_cfg, std::size_t batch_size, std::uint64_t attack_seed) {
  EvalMetrics m;
  std::size_t clean = 0, fgsm_ok = 0, pgd_ok = 0;
  std::mt19937_64 rng(attack_seed);
  for (const auto& idx : epoch_batches(test.size(), batch_size, 0, 0, false)) {
    const auto b = gather<T>(test, idx);
    clean += correct_predictions(eval_logits(model, b.x), b.labels);
    if (fgsm_cfg) fgsm_ok += correct_predictions(eval_logits(model, fgsm(model, b.x, b.labels, *fgsm_cfg, Mode::Eval)), b.labels);
    if (pgd_cfg) {
      pgd_ok += correct_predictions(eval_logits(model, pgd(model, b.x, b.labels, *pgd_cfg, Mode::Eval, &rng)), b.labels);
    }
  }
  m.samples = test.size();
  const double n = std::max<double>(1.0, static_cast<double>(test.size()));
  m.clean = static_cast<double>(clean) / n;
  if (fgsm_cfg) m.fgsm = static_cast<double>(fgsm_ok) / n;
  if (pgd_cfg) m.pgd = static_cast<double>(pgd_ok) / n;
  return m;
}

const char* const kMetricsHeader = "epoch,lr,p_i,loss,clean,fgsm,pgd,compression,channels_present,nonzeros";

void write_metrics_row(std::ostream& os, const EpochMetrics& m) {
  os << m.epoch << ',' << format_real(m.lr) << ',' << format_real(m.prune_rate) << ',' << format_real(m.loss) << ','
     << format_real(m.eval.clean) << ',' << (m.eval.fgsm ? format_real(*m.eval.fgsm) : "") << ','
     << (m.eval.pgd ? format_real(*m.eval.pgd) : "") << ',' << format_real(m.compression) << ','
     << format_real(m.channels_present) << ',' << m.nonzeros << '\n';
}

namespace {

nlohmann::json metrics_json(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch},         {"lr", m.lr},
                   {"p_i", m.prune_rate},      {"loss", m.loss},
                   {"clean", m.eval.clean},    {"compression", m.compression},
                   {"channels_present", m.channels_present}, {"nonzeros", m.nonzeros}};
  j["fgsm"] = m.eval.fgsm ? nlohmann::json(*m.eval.fgsm) : nlohmann::json(nullptr);
  j["pgd"] = m.eval.pgd ? nlohmann::json(*m.eval.pgd) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

template <typename T>
TrainingResult<T> run_training(const ExperimentConfig& cfg, const DataBundle& data, const TrainingObserver<T>& observer) {
  cfg.validate();
  const RngStreams streams = RngStreams::from_seed(cfg.seed);
  std::mt19937_64 init_rng(streams.init), augment_rng(streams.augment), attack_rng(streams.attack);

  TrainingResult<T> result{build_model<T>(arch_for(cfg, data.train), streams.init), {}, {}, {}};
  Model<T>& model = result.model;
  const bool dnr = cfg.mode == TrainMode::Dnr;
  std::optional<SparsityState> state;
  if (dnr) state = init_masks(model, cfg.sparsity(), &init_rng);

  const bool write = !cfg.output_dir.empty();
  std::ofstream metrics_csv, rewire_csv;
  if (write) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "config.txt") << to_config_text(cfg);
    metrics_csv.open(fs::path(cfg.output_dir) / "metrics.csv");
    metrics_csv << kMetricsHeader << '\n';
    if (dnr) {
      rewire_csv.open(fs::path(cfg.output_dir) / "rewire.csv");
      std::vector<std::string> names;
      for (std::size_t l : state->layers) names.push_back(model.slots()[l].name);
      write_rewire_header(rewire_csv, names);
    }
  }

  const HybridLossConfig loss_cfg = cfg.loss();
  const AttackConfig train_attack = cfg.train_attack();
  const AttackConfig eval_pgd = cfg.eval_attack();
  const AttackConfig eval_fgsm = cfg.fgsm_attack();
  ForwardOptions bind_opts;
  bind_opts.mode = Mode::Train;
  bind_opts.trainable = true;
  bind_opts.masked = dnr;

  std::string last_stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_mode(Mode::Train);
    if (observer.on_epoch_start) observer.on_epoch_start(epoch, model);
    SgdConfig sgd = cfg.sgd();
    sgd.lr = lr_at_epoch(cfg.schedule(), epoch);
    const bool warmup = epoch < loss_cfg.warmup_epochs;
    const double p_i = state ? state->prune_rate : 0.0;

    double loss_sum = 0.0;
    const auto batches = epoch_batches(data.train.size(), cfg.batch_size, streams.shuffle, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      try {
        Batch<T> batch = gather<T>(data.train, batches[bi]);
        if (cfg.augment) batch = augmented(batch, augment_rng);
        std::optional<Tensor<T>> xhat;
        if (loss_cfg.needs_adversarial(warmup)) {
          xhat = pgd(model, batch.x, batch.labels, train_attack, cfg.attack_bn_mode, &attack_rng);
        }
        ad::Tape<T> tape;
        const auto params = model.bind(tape, bind_opts);
        const auto hl = hybrid_loss(model, tape, params, batch.x, batch.labels, xhat ? &*xhat : nullptr, loss_cfg,
                                    warmup, Mode::Train);
        const T loss = hl.total.value().item();
        last_stats = describe_batch(hl);
        if (!std::isfinite(static_cast<double>(loss))) throw NumericalError("non-finite loss");
        const auto grads = tape.backward(hl.total);
        std::vector<Tensor<T>> per_slot;
        per_slot.reserve(params.leaves.size());
        for (const auto& leaf : params.leaves) per_slot.push_back(grads.at(leaf));
        sgd_step(model.slots(), per_slot, sgd);
        model.update_running_stats(hl.clean);
        if (observer.on_batch) observer.on_batch(epoch, tape, hl);
        loss_sum += static_cast<double>(loss) * static_cast<double>(batches[bi].size());
      } catch (const NumericalError& e) {
        std::ostringstream diag;
        diag << e.what() << " at epoch " << epoch << " batch " << bi << " (lr " << sgd.lr << ")\n"
             << "last batch statistics:\n"
             << (last_stats.empty() ? "  none\n" : last_stats);
        if (write) std::ofstream(fs::path(cfg.output_dir) / "diagnostic.txt") << diag.str();
        throw NumericalError(diag.str());
      }
    }

    if (state) {
      auto rep = epoch_rewire(model, *state);
      if (write) write_rewire_row(rewire_csv, rep);
      if (observer.on_rewire) observer.on_rewire(rep, model, *state);
      result.rewires.push_back(std::move(rep));
    } else {
      update_duplicates(model);
    }

    model.set_mode(Mode::Eval);
    const bool robust = epoch == cfg.epochs - 1 || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = sgd.lr;
    m.prune_rate = p_i;
    m.loss = loss_sum / std::max<double>(1.0, static_cast<double>(data.train.size()));
    m.eval = evaluate(model, data.test, robust ? &eval_fgsm : nullptr, robust ? &eval_pgd : nullptr, cfg.batch_size,
                      streams.attack);
    m.compression = compression_ratio(model);
    m.channels_present = channels_present(model);
    m.nonzeros = count_nonzeros(model);
    if (write) {
      write_metrics_row(metrics_csv, m);
      metrics_csv.flush();
    }
    if (!result.best || m.eval.clean > result.best->eval.clean) result.best = m;
    result.history.push_back(m);
  }
  model.set_mode(Mode::Eval);

  if (write) {
    save_checkpoint(model, (fs::path(cfg.output_dir) / "model.ckpt").string());
    nlohmann::json summary{{"epochs", cfg.epochs}, {"compression", compression_ratio(model)}};
    if (result.best) summary["best"] = metrics_json(*result.best);
    if (!result.history.empty()) summary["final"] = metrics_json(result.history.back());
    std::ofstream(fs::path(cfg.output_dir) / "summary.json") << summary.dump(2) << '\n';
  }
  return result;
}

template <typename T>
std::vector<SensitivityRow> sensitivity_scan(Model<T>& model, const Dataset& test, double percent,
                                             const AttackConfig& pgd_cfg, std::size_t batch_size,
                                             std::uint64_t attack_seed) {
  if (!(percent >= 0.0 && percent <= 100.0)) throw std::invalid_argument("sensitivity percent must lie in [0, 100]");
  const auto base = evaluate(model, test, nullptr, &pgd_cfg, batch_size, attack_seed);
  std::vector<SensitivityRow> rows;
  for (std::size_t l : model.prunable_slots()) {
    auto& slot = model.slots()[l];
    const ParamSlot<T> saved = slot;
    SensitivityRow row;
    row.layer = slot.name;
    row.clean_base = base.clean;
    row.pgd_base = *base.pgd;
    row.pruned = static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(slot.live_count())));
    if (row.pruned == 0) {
      row.clean_pruned = base.clean;
      row.pgd_pruned = *base.pgd;
    } else {
      prune_irregular(slot, row.pruned, 0);
      const auto m = evaluate(model, test, nullptr, &pgd_cfg, batch_size, attack_seed);
      row.clean_pruned = m.clean;
      row.pgd_pruned = *m.pgd;
      slot = saved;
    }
    rows.push_back(row);
  }
  return rows;
}

template <typename T>
std::vector<SweepRow> attack_sweep(const Model<T>& model, const Dataset& test, const std::vector<int>& iterations,
                                   const std::vector<double>& epsilons, double alpha, std::size_t batch_size,
                                   std::uint64_t attack_seed) {
  std::vector<SweepRow> rows;
  for (int k : iterations) {
    for (double eps : epsilons) {
      AttackConfig a;
      a.iterations = k;
      a.epsilon = eps;
      a.alpha = alpha > 0.0 ? alpha : (eps > 0.0 ? 2.5 * eps / k : 1.0);
      const auto m = evaluate(model, test, nullptr, &a, batch_size, attack_seed);
      rows.push_back({k, eps, a.alpha, *m.pgd});
    }
  }
  return rows;
}

void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityRow>& rows) {
  os << "layer,pruned,clean_base,clean_pruned,clean_drop,pgd_base,pgd_pruned,pgd_drop\n";
  for (const auto& r : rows) {
    os << r.layer << ',' << r.pruned << ',' << format_real(r.clean_base) << ',' << format_real(r.clean_pruned) << ','
       << format_real(r.clean_drop()) << ',' << format_real(r.pgd_base) << ',' << format_real(r.pgd_pruned) << ','
       << format_real(r.pgd_drop()) << '\n';
  }
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "iterations,epsilon,alpha,pgd\n";
  for (const auto& r : rows) {
    os << r.iterations << ',' << format_real(r.epsilon) << ',' << format_real(r.alpha) << ','
       << format_real(r.accuracy) << '\n';
  }
}

#define DNR_INSTANTIATE_EXPERIMENT(T)                                                                                 \
  template std::size_t correct_predictions<T>(const Tensor<T>&, const std::vector<int>&);                             \
  template EvalMetrics evaluate<T>(const Model<T>&, const Dataset&, const AttackConfig*, const AttackConfig*,          \
                                   std::size_t, std::uint64_t);                                                       \
  template TrainingResult<T> run_training<T>(const ExperimentConfig&, const DataBundle&, const TrainingObserver<T>&); \
  template std::vector<SensitivityRow> sensitivity_scan<T>(Model<T>&, const Dataset&, double, const AttackConfig&,    \
                                                           std::size_t, std::uint64_t);                               \
  template std::vector<SweepRow> attack_sweep<T>(const Model<T>&, const Dataset&, const std::vector<int>&,            \
                                                 const std::vector<double>&, double, std::size_t, std::uint64_t);

DNR_INSTANTIATE_EXPERIMENT(float)
DNR_INSTANTIATE_EXPERIMENT(double)

}  // namespace dnr
