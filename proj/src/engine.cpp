// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace dnr {

const char* to_string(PruneType type) { return type == PruneType::Irregular ? "irregular" : "channel"; }
const char* to_string(MomentumContribution c) { return c == MomentumContribution::Sum ? "sum" : "mean"; }
const char* to_string(MaskInit init) { return init == MaskInit::Magnitude ? "magnitude" : "random"; }

void SparsityConfig::validate() const {
  if (!(density > 0.0 && density <= 1.0)) throw std::invalid_argument("density must lie in (0, 1]");
  if (!(prune_rate >= 0.0 && prune_rate <= 1.0)) throw std::invalid_argument("prune rate must lie in [0, 1]");
  if (total_epochs < 1) throw std::invalid_argument("total epochs must be >= 1");
}

void HybridLossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw std::invalid_argument("rho must be >= 0");
  if (warmup_epochs < 0) throw std::invalid_argument("warm-up epochs must be >= 0");
}

namespace {

// Input-channel geometry of a prunable weight: theta[f, c, k] with k over the
// kernel window.
struct ChannelView {
  std::size_t filters = 0, channels = 0, window = 0;

  std::size_t block() const { return filters * window; }
  std::size_t at(std::size_t f, std::size_t c, std::size_t k) const { return (f * channels + c) * window + k; }
};

template <typename T>
ChannelView channel_view(const ParamSlot<T>& slot) {
  const Shape& s = slot.theta.shape();
  if (slot.kind != LayerKind::Conv || s.size() != 4) {
    throw std::invalid_argument("channel operations need a conv weight, got " + slot.name);
  }
  return {s[0], s[1], s[2] * s[3]};
}

template <typename T>
bool channel_live(const ParamSlot<T>& slot, const ChannelView& v, std::size_t c) {
  for (std::size_t f = 0; f < v.filters; ++f) {
    for (std::size_t k = 0; k < v.window; ++k) {
      if (slot.mask[v.at(f, c, k)] != T(0)) return true;
    }
  }
  return false;
}

template <typename T>
void set_channel(ParamSlot<T>& slot, const ChannelView& v, std::size_t c, bool live) {
  for (std::size_t f = 0; f < v.filters; ++f) {
    for (std::size_t k = 0; k < v.window; ++k) {
      const std::size_t i = v.at(f, c, k);
      slot.mask[i] = live ? T(1) : T(0);
      slot.theta[i] = T(0);
      if (live) slot.momentum[i] = T(0);
    }
  }
}

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

// ceil with a guard against products like 0.3 * 10 landing just above 3.
std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t budget) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> out(n, 0);
  if (n == 0 || budget == 0) return out;
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("apportionment weights must be finite and >= 0");
    total += w;
  }
  std::vector<double> w(weights.begin(), weights.end());
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(n);
  }
  std::vector<double> frac(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = static_cast<double>(budget) * w[i] / total;
    const double f = std::floor(q);
    out[i] = static_cast<std::size_t>(f);
    frac[i] = q - f;
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  // Rounding noise can push the floors one over the budget.
  for (auto it = order.rbegin(); assigned > budget && it != order.rend(); ++it) {
    if (out[*it] > 0) {
      --out[*it];
      --assigned;
    }
  }
  for (std::size_t k = 0; assigned < budget; k = (k + 1) % n) {
    ++out[order[k]];
    ++assigned;
  }
  return out;
}

// The k candidates with the largest (or smallest) key, ties to the lowest
// index, in ranking order.
template <typename Key>
std::vector<std::size_t> top_k_indices(std::size_t k, const std::vector<std::size_t>& candidates, Key key,
                                       bool largest) {
  std::vector<std::size_t> idx = candidates;
  auto cmp = [&](std::size_t a, std::size_t b) {
    const auto ka = key(a), kb = key(b);
    if (ka != kb) return largest ? ka > kb : ka < kb;
    return a < b;
  };
  if (k < idx.size()) {
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
    idx.resize(k);
  } else {
    std::sort(idx.begin(), idx.end(), cmp);
  }
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
std::size_t count_nonzeros(const Model<T>& model) {
  std::size_t n = 0;
  for (const auto& s : model.slots()) {
    if (s.prunable) n += s.live_count();
  }
  return n;
}

template <typename T>
void update_duplicates(Model<T>& model) {
  for (auto& s : model.slots()) s.dup = s.masked();
}

template <typename T>
T regularizer_value(const Model<T>& model) {
  T r = T(0);
  for (const auto& s : model.slots()) {
    if (!s.prunable) continue;
    for (std::size_t i = 0; i < s.theta.numel(); ++i) {
      const T d = (s.mask[i] == T(0) ? T(0) : s.theta[i]) - s.dup[i];
      r += d * d;
    }
  }
  return r;
}

template <typename T>
SparsityState init_masks(Model<T>& model, const SparsityConfig& cfg, std::mt19937_64* rng) {
  cfg.validate();
  if (cfg.init == MaskInit::Random && !rng) throw std::invalid_argument("random mask init needs an rng");
  SparsityState st;
  st.config = cfg;
  st.prune_rate = cfg.prune_rate;
  st.layers = model.prunable_slots();
  auto& slots = model.slots();

  for (std::size_t l : st.layers) st.total_weights += slots[l].theta.numel();

  if (cfg.prune_type == PruneType::Irregular) {
    std::vector<double> cards;
    for (std::size_t l : st.layers) cards.push_back(static_cast<double>(slots[l].theta.numel()));
    const auto counts = largest_remainder(cards, round_count(cfg.density * static_cast<double>(st.total_weights)));
    for (std::size_t j = 0; j < st.layers.size(); ++j) {
      auto& s = slots[st.layers[j]];
      if (counts[j] < 1) {
        throw std::invalid_argument("density " + std::to_string(cfg.density) + " leaves no weight in " + s.name);
      }
      std::vector<std::size_t> all(s.theta.numel());
      std::iota(all.begin(), all.end(), 0);
      std::vector<std::size_t> keep;
      if (cfg.init == MaskInit::Random) {
        std::shuffle(all.begin(), all.end(), *rng);
        keep.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(counts[j]));
      } else {
        keep = top_k_indices(counts[j], all, [&](std::size_t i) { return std::abs(s.theta[i]); }, true);
      }
      s.mask = Tensor<T>(s.theta.shape(), T(0));
      for (std::size_t i : keep) s.mask[i] = T(1);
    }
  } else {
    for (std::size_t l : st.layers) {
      auto& s = slots[l];
      const ChannelView v = channel_view(s);
      const std::size_t k = std::max<std::size_t>(1, ceil_count(cfg.density * static_cast<double>(v.channels)));
      std::vector<std::size_t> all(v.channels);
      std::iota(all.begin(), all.end(), 0);
      std::vector<std::size_t> keep;
      if (cfg.init == MaskInit::Random) {
        std::shuffle(all.begin(), all.end(), *rng);
        keep.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
      } else {
        const auto score = channel_importance(s);
        keep = top_k_indices(k, all, [&](std::size_t c) { return score[c]; }, true);
      }
      s.mask = Tensor<T>(s.theta.shape(), T(0));
      for (std::size_t c : keep) {
        for (std::size_t f = 0; f < v.filters; ++f) {
          for (std::size_t w = 0; w < v.window; ++w) s.mask[v.at(f, c, w)] = T(1);
        }
      }
    }
  }
  model.apply_masks();
  update_duplicates(model);
  st.target_nonzeros = count_nonzeros(model);
  return st;
}

// ---------------------------------------------------------------------------

template <typename T>
HybridLoss<T> hybrid_loss(const Model<T>& model, ad::Tape<T>& tape, const BoundParameters<T>& params,
                          const Tensor<T>& x, const std::vector<int>& labels, const Tensor<T>* xhat,
                          const HybridLossConfig& cfg, bool warmup, Mode mode) {
  cfg.validate();
  HybridLoss<T> r;
  ad::Var<T> clean_ce;
  {
    typename ad::Tape<T>::ScopeGuard scope(tape, "clean");
    r.clean = model.forward(tape.constant(x, "input"), params, mode);
    clean_ce = ad::softmax_cross_entropy(r.clean.logits, labels);
  }
  r.clean_ce = clean_ce.value().item();
  if (warmup) {
    r.total = clean_ce;
    return r;
  }

  ad::Var<T> inner = clean_ce;
  if (cfg.rho > 0.0) {
    typename ad::Tape<T>::ScopeGuard scope(tape, "regularizer");
    ad::Var<T> reg;
    const auto& slots = model.slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i].prunable) continue;
      auto drift = ad::sum_squares(ad::sub(params.effective[i], tape.constant(slots[i].dup, slots[i].name + ".dup")));
      reg = reg.valid() ? ad::add(reg, drift) : drift;
    }
    if (reg.valid()) {
      r.regularizer = reg.value().item();
      inner = ad::add(inner, ad::scale(reg, static_cast<T>(cfg.rho / 2.0)));
    }
  }
  if (!cfg.needs_adversarial(false)) {
    r.total = inner;
    return r;
  }
  if (!xhat) throw std::invalid_argument("hybrid loss with beta < 1 needs adversarial inputs");
  ad::Var<T> adv_ce;
  {
    typename ad::Tape<T>::ScopeGuard scope(tape, "adversarial");
    auto adv = model.forward(tape.constant(*xhat, "adversarial_input"), params, mode);
    adv_ce = ad::softmax_cross_entropy(adv.logits, labels);
  }
  r.adversarial_ce = adv_ce.value().item();
  r.total = ad::add(ad::scale(inner, static_cast<T>(cfg.beta)), ad::scale(adv_ce, static_cast<T>(1.0 - cfg.beta)));
  return r;
}

// ---------------------------------------------------------------------------

template <typename T>
void prune_irregular(ParamSlot<T>& slot, std::size_t count, std::size_t floor) {
  if (count == 0) return;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < slot.mask.numel(); ++i) {
    if (slot.mask[i] != T(0)) live.push_back(i);
  }
  if (count + floor > live.size()) {
    throw std::invalid_argument("cannot prune " + std::to_string(count) + " of " + std::to_string(live.size()) +
                                " live weights in " + slot.name + " (floor " + std::to_string(floor) + ")");
  }
  const auto victims = top_k_indices(count, live, [&](std::size_t i) { return std::abs(slot.theta[i]); },
                                        false);
  for (std::size_t i : victims) {
    slot.mask[i] = T(0);
    slot.theta[i] = T(0);
  }
}

template <typename T>
std::size_t regrow_irregular(ParamSlot<T>& slot, std::size_t count) {
  if (count == 0) return 0;
  std::vector<std::size_t> dead;
  for (std::size_t i = 0; i < slot.mask.numel(); ++i) {
    if (slot.mask[i] == T(0)) dead.push_back(i);
  }
  const auto chosen = top_k_indices(count, dead,
                                       [&](std::size_t i) { return std::abs(slot.momentum[i]); }, true);
  for (std::size_t i : chosen) {
    slot.mask[i] = T(1);
    slot.theta[i] = T(0);
    slot.momentum[i] = T(0);
  }
  return chosen.size();
}

template <typename T>
std::vector<T> channel_importance(const ParamSlot<T>& slot) {
  const ChannelView v = channel_view(slot);
  std::vector<T> score(v.channels, T(0));
  for (std::size_t f = 0; f < v.filters; ++f) {
    for (std::size_t c = 0; c < v.channels; ++c) {
      for (std::size_t k = 0; k < v.window; ++k) {
        const std::size_t i = v.at(f, c, k);
        const T w = slot.mask[i] == T(0) ? T(0) : slot.theta[i];
        score[c] += w * w;
      }
    }
  }
  return score;
}

template <typename T>
std::size_t live_channels(const ParamSlot<T>& slot) {
  const ChannelView v = channel_view(slot);
  std::size_t n = 0;
  for (std::size_t c = 0; c < v.channels; ++c) n += channel_live(slot, v, c);
  return n;
}

template <typename T>
std::size_t prune_channels(ParamSlot<T>& slot, std::size_t count) {
  const ChannelView v = channel_view(slot);
  std::vector<std::size_t> live;
  for (std::size_t c = 0; c < v.channels; ++c) {
    if (channel_live(slot, v, c)) live.push_back(c);
  }
  if (live.empty()) return 0;
  count = std::min(count, live.size() - 1);
  const auto score = channel_importance(slot);
  const auto victims = top_k_indices(count, live, [&](std::size_t c) { return score[c]; }, false);
  for (std::size_t c : victims) set_channel(slot, v, c, false);
  return victims.size();
}

template <typename T>
std::size_t regrow_channels(ParamSlot<T>& slot, std::size_t count) {
  const ChannelView v = channel_view(slot);
  std::vector<std::size_t> dead;
  for (std::size_t c = 0; c < v.channels; ++c) {
    if (!channel_live(slot, v, c)) dead.push_back(c);
  }
  std::vector<T> mom(v.channels, T(0));
  for (std::size_t f = 0; f < v.filters; ++f) {
    for (std::size_t c = 0; c < v.channels; ++c) {
      for (std::size_t k = 0; k < v.window; ++k) {
        const T m = slot.momentum[v.at(f, c, k)];
        mom[c] += m * m;
      }
    }
  }
  const auto chosen = top_k_indices(count, dead, [&](std::size_t c) { return mom[c]; }, true);
  for (std::size_t c : chosen) set_channel(slot, v, c, true);
  return chosen.size();
}

std::vector<std::size_t> momentum_redistribution(std::span<const double> masses, std::size_t budget,
                                                 std::span<const std::size_t> capacity) {
  auto counts = largest_remainder(masses, budget);
  if (capacity.empty()) return counts;
  if (capacity.size() != masses.size()) throw std::invalid_argument("one capacity per layer required");

  double total = 0.0;
  for (double m : masses) total += m;
  std::vector<std::size_t> order(masses.size());
  std::iota(order.begin(), order.end(), 0);
  if (total > 0.0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return masses[a] > masses[b]; });
  }
  std::size_t excess = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > capacity[i]) {
      excess += counts[i] - capacity[i];
      counts[i] = capacity[i];
    }
  }
  for (std::size_t i : order) {
    if (excess == 0) break;
    const std::size_t take = std::min(excess, capacity[i] - counts[i]);
    counts[i] += take;
    excess -= take;
  }
  return counts;
}

template <typename T>
std::vector<double> momentum_masses(const Model<T>& model, const std::vector<std::size_t>& layers,
                                    MomentumContribution contribution) {
  std::vector<double> out;
  for (std::size_t l : layers) {
    const auto& s = model.slots().at(l);
    double mass = 0.0;
    std::size_t live = 0;
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i] == T(0)) continue;
      mass += std::abs(static_cast<double>(s.momentum[i]));
      ++live;
    }
    if (contribution == MomentumContribution::Mean) mass = live ? mass / static_cast<double>(live) : 0.0;
    out.push_back(mass);
  }
  return out;
}

namespace {

std::vector<double> normalized(const std::vector<double>& masses) {
  const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
  std::vector<double> out(masses.size(), masses.empty() ? 0.0 : 1.0 / static_cast<double>(masses.size()));
  if (total > 0.0) {
    for (std::size_t i = 0; i < masses.size(); ++i) out[i] = masses[i] / total;
  }
  return out;
}

template <typename T>
void rewire_irregular(Model<T>& model, const SparsityState& st, const std::vector<double>& masses,
                      RewireReport& rep) {
  auto& slots = model.slots();
  const std::size_t L = st.layers.size();
  const std::size_t budget = round_count(st.prune_rate * static_cast<double>(count_nonzeros(model)));

  // Global magnitude ranking over all live prunable weights.
  struct Candidate {
    T magnitude;
    std::size_t layer, index;
  };
  std::vector<Candidate> live;
  std::vector<std::size_t> remaining(L);
  for (std::size_t j = 0; j < L; ++j) {
    const auto& s = slots[st.layers[j]];
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i] != T(0)) live.push_back({std::abs(s.theta[i]), j, i});
    }
    remaining[j] = s.live_count();
  }
  std::sort(live.begin(), live.end(), [](const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  });
  std::vector<std::size_t> prune_counts(L, 0);
  std::size_t pruned = 0;
  for (const auto& c : live) {
    if (pruned == budget) break;
    if (remaining[c.layer] <= 1) continue;
    --remaining[c.layer];
    ++prune_counts[c.layer];
    ++pruned;
  }
  std::vector<std::size_t> capacity(L);
  for (std::size_t j = 0; j < L; ++j) {
    auto& s = slots[st.layers[j]];
    prune_irregular(s, prune_counts[j], 1);
    capacity[j] = s.mask.numel() - s.live_count();
  }
  const auto regrow = momentum_redistribution(masses, pruned, capacity);
  std::size_t regrown = 0;
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t got = regrow_irregular(slots[st.layers[j]], regrow[j]);
    rep.layer_pruned[j] = prune_counts[j];
    rep.layer_regrown[j] = got;
    regrown += got;
  }
  rep.pruned = pruned;
  rep.regrown = regrown;
}

template <typename T>
void rewire_channels(Model<T>& model, const SparsityState& st, const std::vector<double>& masses,
                     RewireReport& rep) {
  auto& slots = model.slots();
  const std::size_t L = st.layers.size();
  std::vector<ChannelView> views;
  std::size_t live_total = 0;
  std::vector<std::size_t> remaining(L);
  struct Candidate {
    T score;
    std::size_t layer, channel;
  };
  std::vector<Candidate> live;
  for (std::size_t j = 0; j < L; ++j) {
    const auto& s = slots[st.layers[j]];
    views.push_back(channel_view(s));
    const auto score = channel_importance(s);
    remaining[j] = 0;
    for (std::size_t c = 0; c < views[j].channels; ++c) {
      if (channel_live(s, views[j], c)) {
        live.push_back({score[c], j, c});
        ++remaining[j];
      }
    }
    live_total += remaining[j];
  }
  const std::size_t budget = round_count(st.prune_rate * static_cast<double>(live_total));
  std::sort(live.begin(), live.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.channel < b.channel;
  });
  std::vector<std::size_t> prune_counts(L, 0);
  std::size_t pruned = 0;
  for (const auto& c : live) {
    if (pruned == budget) break;
    if (remaining[c.layer] <= 1) continue;
    --remaining[c.layer];
    ++prune_counts[c.layer];
    ++pruned;
  }
  for (std::size_t j = 0; j < L; ++j) prune_channels(slots[st.layers[j]], prune_counts[j]);

  // Channels only trade within layers of equal block size, so the weight
  // count is conserved exactly.
  std::map<std::size_t, std::vector<std::size_t>> classes;
  for (std::size_t j = 0; j < L; ++j) classes[views[j].block()].push_back(j);
  for (const auto& [block, members] : classes) {
    std::size_t class_budget = 0;
    std::vector<double> class_mass;
    std::vector<std::size_t> capacity;
    for (std::size_t j : members) {
      class_budget += prune_counts[j];
      class_mass.push_back(masses[j]);
      capacity.push_back(views[j].channels - remaining[j]);
    }
    const auto regrow = momentum_redistribution(class_mass, class_budget, capacity);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const std::size_t j = members[m];
      const std::size_t got = regrow_channels(slots[st.layers[j]], regrow[m]);
      rep.layer_pruned[j] = prune_counts[j] * block;
      rep.layer_regrown[j] = got * block;
      rep.pruned += prune_counts[j] * block;
      rep.regrown += got * block;
    }
  }
}

}  // namespace

template <typename T>
RewireReport epoch_rewire(Model<T>& model, SparsityState& state) {
  auto& slots = model.slots();
  const std::size_t L = state.layers.size();
  RewireReport rep;
  rep.epoch = state.epoch;
  rep.prune_rate = state.prune_rate;
  rep.layer_pruned.assign(L, 0);
  rep.layer_regrown.assign(L, 0);

  const std::size_t before = count_nonzeros(model);
  const auto masses = momentum_masses(model, state.layers, state.config.contribution);
  rep.shares = normalized(masses);

  // Fully dense masks have nothing to trade; pruning would only zero weights.
  const bool dense = before == state.total_weights;
  if (!dense && state.prune_rate > 0.0 && L > 0) {
    if (state.config.prune_type == PruneType::Irregular) {
      rewire_irregular(model, state, masses, rep);
    } else {
      rewire_channels(model, state, masses, rep);
    }
  }
  // p_i = p0 * (E - i) / E, computed directly so the schedule ends at exactly 0.
  const double E = static_cast<double>(state.config.total_epochs);
  state.prune_rate = std::max(0.0, state.config.prune_rate * (E - static_cast<double>(state.epoch + 1)) / E);

  model.apply_masks();
  update_duplicates(model);
  const std::size_t after = count_nonzeros(model);
  if (after != before || after != state.target_nonzeros || rep.pruned != rep.regrown) {
    throw ConservationError("live weight count changed across rewire: before " + std::to_string(before) +
                            ", after " + std::to_string(after) + ", target " +
                            std::to_string(state.target_nonzeros));
  }
  ++state.epoch;

  for (std::size_t j = 0; j < L; ++j) {
    rep.names.push_back(slots[state.layers[j]].name);
    rep.nonzeros.push_back(slots[state.layers[j]].live_count());
  }
  rep.compression = compression_ratio(model);
  rep.channels_present = channels_present(model);
  return rep;
}

template <typename T>
double compression_ratio(const Model<T>& model) {
  std::size_t total = 0, live = 0;
  for (const auto& s : model.slots()) {
    if (!s.prunable) continue;
    total += s.theta.numel();
    live += s.live_count();
  }
  if (total == 0) return 1.0;
  if (live == 0) throw std::domain_error("compression ratio undefined: no live weights");
  return static_cast<double>(total) / static_cast<double>(live);
}

template <typename T>
double channels_present(const Model<T>& model) {
  std::size_t total = 0, live = 0;
  for (const auto& s : model.slots()) {
    if (!s.prunable || s.kind != LayerKind::Conv) continue;
    total += s.theta.dim(1);
    live += live_channels(s);
  }
  return total == 0 ? 1.0 : static_cast<double>(live) / static_cast<double>(total);
}

void write_rewire_header(std::ostream& os, const std::vector<std::string>& layer_names) {
  os << "epoch,p_i";
  for (const auto& n : layer_names) os << ',' << n << ":nonzeros";
  for (const auto& n : layer_names) os << ',' << n << ":share";
  os << ",compression,channels_present\n";
}

void write_rewire_row(std::ostream& os, const RewireReport& r) {
  os << r.epoch << ',' << r.prune_rate;
  for (auto n : r.nonzeros) os << ',' << n;
  for (auto s : r.shares) os << ',' << s;
  os << ',' << r.compression << ',' << r.channels_present << '\n';
}

#define DNR_INSTANTIATE_ENGINE(T)                                                                                  \
  template SparsityState init_masks<T>(Model<T>&, const SparsityConfig&, std::mt19937_64*);                         \
  template std::size_t count_nonzeros<T>(const Model<T>&);                                                         \
  template void update_duplicates<T>(Model<T>&);                                                                   \
  template T regularizer_value<T>(const Model<T>&);                                                                \
  template HybridLoss<T> hybrid_loss<T>(const Model<T>&, ad::Tape<T>&, const BoundParameters<T>&, const Tensor<T>&, \
                                        const std::vector<int>&, const Tensor<T>*, const HybridLossConfig&, bool,  \
                                        Mode);                                                                     \
  template void prune_irregular<T>(ParamSlot<T>&, std::size_t, std::size_t);                                       \
  template std::size_t regrow_irregular<T>(ParamSlot<T>&, std::size_t);                                            \
  template std::vector<T> channel_importance<T>(const ParamSlot<T>&);                                              \
  template std::size_t live_channels<T>(const ParamSlot<T>&);                                                      \
  template std::size_t prune_channels<T>(ParamSlot<T>&, std::size_t);                                              \
  template std::size_t regrow_channels<T>(ParamSlot<T>&, std::size_t);                                             \
  template std::vector<double> momentum_masses<T>(const Model<T>&, const std::vector<std::size_t>&,                \
                                                  MomentumContribution);                                           \
  template RewireReport epoch_rewire<T>(Model<T>&, SparsityState&);                                                \
  template double compression_ratio<T>(const Model<T>&);                                                           \
  template double channels_present<T>(const Model<T>&);

DNR_INSTANTIATE_ENGINE(float)
DNR_INSTANTIATE_ENGINE(double)

}  // namespace dnr
