// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// dnr: command-line front end.
//
//   dnr train --config run.cfg --density 0.1 --output_dir runs/a
//   dnr eval --checkpoint runs/a/model.ckpt --config run.cfg
//   dnr sweep --checkpoint runs/a/model.ckpt --iterations 1,5,10 --epsilons 0,0.05,0.1
//   dnr sensitivity --checkpoint runs/a/model.ckpt --percent 50
//   dnr inspect-checkpoint runs/a/model.ckpt
//
// Exit codes: 0 success, 1 config error, 2 data or checkpoint error,
// 3 numerical failure.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "dnr/checkpoint.hpp"
#include "dnr/config.hpp"
#include "dnr/data.hpp"
#include "dnr/experiment.hpp"

namespace {

using namespace dnr;

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "Config file (key = value lines)");
    for (const auto& key : config_keys()) {
      app.add_option("--" + key, values[key], config_key_help(key))->group("Config overrides");
    }
  }

  ExperimentConfig resolve(const CLI::App& app) const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& key : config_keys()) {
      if (app.count("--" + key) > 0) set_config_value(cfg, key, values.at(key));
    }
    cfg.validate();
    return cfg;
  }
};

template <typename T>
void check_compatible(const Model<T>& model, const Dataset& ds) {
  const ArchSpec& a = model.arch();
  if (a.in_channels != ds.channels() || a.height != ds.height() || a.width != ds.width() ||
      a.num_classes != ds.num_classes) {
    throw CheckpointError("checkpoint architecture '" + a.name + "' does not match dataset '" + ds.name + "'");
  }
}

template <typename T>
Model<T> load_for(const std::string& path, const Dataset& ds) {
  Model<T> model = load_checkpoint<T>(path);
  check_compatible(model, ds);
  model.set_mode(Mode::Eval);
  return model;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  return os;
}

template <typename T>
int cmd_train(const ExperimentConfig& cfg) {
  const DataBundle data = load_datasets(cfg);
  TrainingObserver<T> obs;
  obs.on_epoch_start = [&](int epoch, const Model<T>&) {
    std::cerr << "epoch " << epoch + 1 << '/' << cfg.epochs << '\n';
  };
  const auto result = run_training<T>(cfg, data, obs);
  if (!result.history.empty()) {
    std::cout << kMetricsHeader << '\n';
    write_metrics_row(std::cout, result.history.back());
  }
  return 0;
}

template <typename T>
int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt) {
  const DataBundle data = load_datasets(cfg);
  const Model<T> model = load_for<T>(ckpt, data.test);
  const AttackConfig f = cfg.fgsm_attack(), p = cfg.eval_attack();
  const auto m = evaluate(model, data.test, &f, &p, cfg.batch_size, RngStreams::from_seed(cfg.seed).attack);
  std::cout << "clean,fgsm,pgd,samples,compression\n"
            << format_real(m.clean) << ',' << format_real(*m.fgsm) << ',' << format_real(*m.pgd) << ',' << m.samples
            << ',' << format_real(compression_ratio(model)) << '\n';
  return 0;
}

template <typename T>
int cmd_sweep(const ExperimentConfig& cfg, const std::string& ckpt, const std::vector<int>& iters,
              const std::vector<std::string>& eps_text, double alpha, const std::string& out) {
  const DataBundle data = load_datasets(cfg);
  const Model<T> model = load_for<T>(ckpt, data.test);
  std::vector<double> eps;
  for (const auto& e : eps_text) eps.push_back(parse_real(e));
  const auto rows = attack_sweep(model, data.test, iters, eps, alpha, cfg.batch_size,
                                 RngStreams::from_seed(cfg.seed).attack);
  if (out.empty()) {
    write_sweep_csv(std::cout, rows);
  } else {
    auto os = open_output(out);
    write_sweep_csv(os, rows);
  }
  return 0;
}

template <typename T>
int cmd_sensitivity(const ExperimentConfig& cfg, const std::string& ckpt, double percent, const std::string& out) {
  const DataBundle data = load_datasets(cfg);
  Model<T> model = load_for<T>(ckpt, data.test);
  const auto rows = sensitivity_scan(model, data.test, percent, cfg.eval_attack(), cfg.batch_size,
                                     RngStreams::from_seed(cfg.seed).attack);
  if (out.empty()) {
    write_sensitivity_csv(std::cout, rows);
  } else {
    auto os = open_output(out);
    write_sensitivity_csv(os, rows);
  }
  return 0;
}

template <typename F>
int dispatch(Precision p, F&& f) {
  return p == Precision::Float64 ? f(double{}) : f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic network rewiring: sparse adversarial training"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, sweep_flags, sens_flags;
  std::string eval_ckpt, sweep_ckpt, sens_ckpt, sweep_out, sens_out, inspect_path;
  std::vector<int> sweep_iters{1, 2, 5, 10, 20};
  std::vector<std::string> sweep_eps{"0", "0.05", "0.1", "0.15", "0.2"};
  double sweep_alpha = 0.0, sens_percent = 50.0;

  auto* train = app.add_subcommand("train", "Train a model and write metrics, rewire log and checkpoint");
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "Clean, FGSM and PGD accuracy of a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_flags.attach(*eval);

  auto* sweep = app.add_subcommand("sweep", "PGD accuracy over attack iterations and epsilons");
  sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint file")->required();
  sweep->add_option("--iterations", sweep_iters, "PGD iteration counts")->delimiter(',');
  sweep->add_option("--epsilons", sweep_eps, "L-inf bounds, fractions allowed")->delimiter(',');
  sweep->add_option("--alpha", sweep_alpha, "PGD step; <= 0 uses 2.5*eps/k");
  sweep->add_option("--out", sweep_out, "CSV path (default stdout)");
  sweep_flags.attach(*sweep);

  auto* sens = app.add_subcommand("sensitivity", "Per-layer accuracy drop when pruning one layer");
  sens->add_option("--checkpoint", sens_ckpt, "Checkpoint file")->required();
  sens->add_option("--percent", sens_percent, "Share of live weights to prune, in percent")->check(CLI::Range(0.0, 100.0));
  sens->add_option("--out", sens_out, "CSV path (default stdout)");
  sens_flags.attach(*sens);

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header and mask statistics");
  inspect->add_option("path", inspect_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      const auto cfg = train_flags.resolve(*train);
      return dispatch(cfg.precision, [&](auto t) { return cmd_train<decltype(t)>(cfg); });
    }
    if (eval->parsed()) {
      const auto cfg = eval_flags.resolve(*eval);
      return dispatch(cfg.precision, [&](auto t) { return cmd_eval<decltype(t)>(cfg, eval_ckpt); });
    }
    if (sweep->parsed()) {
      const auto cfg = sweep_flags.resolve(*sweep);
      return dispatch(cfg.precision, [&](auto t) {
        return cmd_sweep<decltype(t)>(cfg, sweep_ckpt, sweep_iters, sweep_eps, sweep_alpha, sweep_out);
      });
    }
    if (sens->parsed()) {
      const auto cfg = sens_flags.resolve(*sens);
      return dispatch(cfg.precision,
                      [&](auto t) { return cmd_sensitivity<decltype(t)>(cfg, sens_ckpt, sens_percent, sens_out); });
    }
    if (inspect->parsed()) {
      std::cout << inspect_checkpoint(inspect_path);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const UnknownArchitecture& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
