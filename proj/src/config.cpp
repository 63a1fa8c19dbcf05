// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace dnr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& v) {
  U out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

double parse_real_key(const std::string& key, const std::string& v) {
  try {
    return parse_real(v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

template <typename E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += names.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(key + ": expected one of " + names + ", got '" + v + "'");
}

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define DNR_FIELD(name, help, getter, setter)                                                         \
  Field {                                                                                             \
    #name, help, [](const ExperimentConfig& c) -> std::string { return getter; },                     \
        [](ExperimentConfig& c, const std::string& v) { setter; }                                     \
  }

#define DNR_REAL(name, help) DNR_FIELD(name, help, fmt_real(c.name), c.name = parse_real_key(#name, v))
#define DNR_INT(name, help) DNR_FIELD(name, help, std::to_string(c.name), c.name = parse_int(#name, v))
#define DNR_SIZE(name, help) \
  DNR_FIELD(name, help, std::to_string(c.name), c.name = parse_unsigned<std::size_t>(#name, v))
#define DNR_BOOL(name, help) \
  DNR_FIELD(name, help, std::string(c.name ? "true" : "false"), c.name = parse_bool(#name, v))
#define DNR_STRING(name, help) DNR_FIELD(name, help, c.name, c.name = v)

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DNR_STRING(arch, "mlp-tiny | conv-tiny | vgg-mini | resnet-mini"),
      DNR_BOOL(prune_linear, "linear weights are prunable too"),
      DNR_STRING(dataset, "mnist | cifar10 | synth"),
      DNR_STRING(data_dir, "directory holding the dataset files"),
      DNR_SIZE(train_subset, "first N training samples, 0 = all"),
      DNR_SIZE(test_subset, "first N test samples, 0 = all"),
      DNR_SIZE(synth_classes, "synthetic blobs: classes"),
      DNR_SIZE(synth_train, "synthetic blobs: training samples"),
      DNR_SIZE(synth_test, "synthetic blobs: test samples"),
      DNR_SIZE(synth_size, "synthetic blobs: image height and width, pixels"),
      DNR_SIZE(synth_channels, "synthetic blobs: channels"),
      DNR_REAL(synth_spread, "synthetic blobs: pixel noise std, input scale [0,1]"),
      DNR_BOOL(augment, "random flip + reflective pad-4 crop on training batches"),
      DNR_FIELD(mode, "dnr | dense (dense trains unmasked with no rewiring)",
                std::string(c.mode == TrainMode::Dnr ? "dnr" : "dense"),
                c.mode = parse_enum<TrainMode>("mode", v, {{"dnr", TrainMode::Dnr}, {"dense", TrainMode::Dense}})),
      DNR_REAL(density, "fraction of prunable weights kept, (0,1]"),
      DNR_FIELD(prune_type, "irregular | channel", std::string(to_string(c.prune_type)),
                c.prune_type = parse_enum<PruneType>("prune_type", v,
                                                     {{"irregular", PruneType::Irregular}, {"channel", PruneType::Channel}})),
      DNR_REAL(prune_rate, "initial fraction of live weights rewired per epoch, decays linearly to 0"),
      DNR_FIELD(momentum_contribution, "sum | mean of |momentum| over live weights per layer",
                std::string(to_string(c.momentum_contribution)),
                c.momentum_contribution = parse_enum<MomentumContribution>(
                    "momentum_contribution", v, {{"sum", MomentumContribution::Sum}, {"mean", MomentumContribution::Mean}})),
      DNR_FIELD(init_mask, "magnitude | random", std::string(to_string(c.init_mask)),
                c.init_mask = parse_enum<MaskInit>("init_mask", v,
                                                   {{"magnitude", MaskInit::Magnitude}, {"random", MaskInit::Random}})),
      DNR_REAL(beta, "weight of the clean+regularizer term, [0,1]; 1 disables the adversarial term"),
      DNR_REAL(rho, "dynamic L2 penalty factor, >= 0"),
      DNR_INT(warmup_epochs, "leading epochs trained on clean loss only"),
      DNR_INT(epochs, "training epochs"),
      DNR_SIZE(batch_size, "samples per batch"),
      DNR_REAL(lr, "initial learning rate"),
      DNR_FIELD(milestones, "comma-separated epochs at which lr is multiplied by lr_gamma",
                [&] {
                  std::string s;
                  for (int m : c.milestones) s += (s.empty() ? "" : ",") + std::to_string(m);
                  return s;
                }(),
                {
                  c.milestones.clear();
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ',')) {
                    item = trim(item);
                    if (!item.empty()) c.milestones.push_back(parse_int("milestones", item));
                  }
                }),
      DNR_REAL(lr_gamma, "learning-rate factor at each milestone"),
      DNR_REAL(momentum, "SGD momentum coefficient, [0,1)"),
      DNR_REAL(weight_decay, "coupled L2 weight decay"),
      DNR_REAL(train_eps, "training PGD L-inf budget, input scale [0,1]"),
      DNR_REAL(train_alpha, "training PGD step, input scale [0,1]"),
      DNR_INT(train_iters, "training PGD iterations"),
      DNR_BOOL(train_random_start, "training PGD starts from a uniform point in the ball"),
      DNR_REAL(eval_eps, "evaluation PGD L-inf budget, input scale [0,1]"),
      DNR_REAL(eval_alpha, "evaluation PGD step, input scale [0,1]"),
      DNR_INT(eval_iters, "evaluation PGD iterations"),
      DNR_REAL(fgsm_eps, "evaluation FGSM budget, input scale [0,1]"),
      DNR_FIELD(attack_bn_mode, "train | eval batch-norm statistics while crafting training attacks",
                std::string(to_string(c.attack_bn_mode)),
                c.attack_bn_mode = parse_enum<Mode>("attack_bn_mode", v, {{"train", Mode::Train}, {"eval", Mode::Eval}})),
      DNR_INT(eval_every, "robust evaluation every N epochs, 0 = last epoch only"),
      DNR_FIELD(seed, "global seed for the init, shuffle, augment and attack streams", std::to_string(c.seed),
                c.seed = parse_unsigned<std::uint64_t>("seed", v)),
      DNR_STRING(output_dir, "directory for metrics, rewire log and checkpoint"),
      DNR_FIELD(precision, "float32 | float64", std::string(c.precision == Precision::Float32 ? "float32" : "float64"),
                c.precision = parse_enum<Precision>("precision", v,
                                                    {{"float32", Precision::Float32}, {"float64", Precision::Float64}})),
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

double parse_real(std::string_view text) {
  const std::string s = trim(text);
  auto one = [&](std::string_view part) {
    const std::string p = trim(part);
    double v = 0.0;
    const auto r = std::from_chars(p.data(), p.data() + p.size(), v);
    if (p.empty() || r.ec != std::errc() || r.ptr != p.data() + p.size()) {
      throw ConfigError("expected a real number, got '" + s + "'");
    }
    return v;
  };
  double v;
  if (const auto slash = s.find('/'); slash != std::string::npos) {
    const double den = one(std::string_view(s).substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + s + "'");
    v = one(std::string_view(s).substr(0, slash)) / den;
  } else {
    v = one(s);
  }
  if (!std::isfinite(v)) throw ConfigError("non-finite value '" + s + "'");
  return v;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string config_key_help(const std::string& key) { return field(key).help; }

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return field(key).get(cfg); }

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  const auto names = architecture_names();
  if (std::find(names.begin(), names.end(), arch) == names.end()) fail("unknown architecture '" + arch + "'");
  if (dataset != "mnist" && dataset != "cifar10" && dataset != "synth") fail("unknown dataset '" + dataset + "'");
  if (dataset == "synth" && (synth_classes < 2 || synth_train == 0 || synth_test == 0 || synth_size == 0 ||
                             synth_channels == 0 || !(synth_spread >= 0))) {
    fail("synthetic dataset needs >= 2 classes, non-empty splits and spread >= 0");
  }
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(lr_gamma > 0)) fail("lr_gamma must be > 0");
  if (eval_every < 0) fail("eval_every must be >= 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1])) {
      fail("milestones must be non-negative and strictly increasing");
    }
  }
  if (prune_type == PruneType::Channel && prune_linear) fail("channel pruning applies to conv layers only");
  try {
    if (mode == TrainMode::Dnr) {
      SparsityConfig s = sparsity();
      s.validate();
    }
    loss().validate();
    if (!(momentum >= 0 && momentum < 1) || !(weight_decay >= 0)) fail("momentum must lie in [0,1), weight_decay >= 0");
    train_attack().validate();
    eval_attack().validate();
    fgsm_attack().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

SparsityConfig ExperimentConfig::sparsity() const {
  SparsityConfig s;
  s.density = density;
  s.prune_type = prune_type;
  s.prune_rate = prune_rate;
  s.total_epochs = std::max(1, epochs);
  s.contribution = momentum_contribution;
  s.init = init_mask;
  return s;
}

HybridLossConfig ExperimentConfig::loss() const { return {beta, rho, warmup_epochs}; }

SgdConfig ExperimentConfig::sgd() const { return {lr, momentum, weight_decay}; }

StepSchedule ExperimentConfig::schedule() const { return {lr, milestones, lr_gamma}; }

AttackConfig ExperimentConfig::train_attack() const {
  AttackConfig a;
  a.epsilon = train_eps;
  a.alpha = train_alpha;
  a.iterations = train_iters;
  a.random_start = train_random_start;
  return a;
}

AttackConfig ExperimentConfig::eval_attack() const {
  AttackConfig a;
  a.epsilon = eval_eps;
  a.alpha = eval_alpha;
  a.iterations = eval_iters;
  return a;
}

AttackConfig ExperimentConfig::fgsm_attack() const {
  AttackConfig a;
  a.epsilon = fgsm_eps;
  a.alpha = std::max(fgsm_eps, 1e-12);
  a.iterations = 1;
  return a;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "  # " + f.help + "\n";
  return out;
}

}  // namespace dnr
