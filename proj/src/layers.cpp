// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/layers.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <type_traits>

namespace dnr {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::BatchNorm: return "batchnorm";
  }
  return "?";
}

const char* to_string(Mode mode) { return mode == Mode::Train ? "train" : "eval"; }

// ---------------------------------------------------------------------------
// ParamSlot

template <typename T>
ParamSlot<T>::ParamSlot(std::string name_, LayerKind kind_, ParamRole role_, bool prunable_,
                        Tensor<T> theta_)
    : name(std::move(name_)), kind(kind_), role(role_), prunable(prunable_), theta(std::move(theta_)) {
  mask = Tensor<T>(theta.shape(), T(1));
  dup = theta;
  momentum = Tensor<T>(theta.shape(), T(0));
}

template <typename T>
std::size_t ParamSlot<T>::live_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    if (mask[i] != T(0)) ++n;
  }
  return n;
}

template <typename T>
Tensor<T> ParamSlot<T>::masked() const {
  Tensor<T> out = theta;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (mask[i] == T(0)) out[i] = T(0);
  }
  return out;
}

template <typename T>
void ParamSlot<T>::apply_mask() {
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    if (mask[i] == T(0)) theta[i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// Model

namespace {

template <typename F>
void for_each_layer(const std::vector<Layer>& layers, F&& f) {
  for (const auto& layer : layers) {
    f(layer);
    if (const auto* block = std::get_if<ResidualBlock>(&layer.op)) {
      for_each_layer(block->body, f);
      for_each_layer(block->shortcut, f);
    }
  }
}

template <typename T>
struct ForwardContext {
  const Model<T>& model;
  const ForwardOptions& opts;
  std::vector<ad::Var<T>> effective;  // parameter as seen by the network
  ForwardResult<T>& result;
};

template <typename T>
ad::Var<T> run_layers(ForwardContext<T>& ctx, const std::vector<Layer>& layers, ad::Var<T> x);

template <typename T>
ad::Var<T> run_layer(ForwardContext<T>& ctx, const Layer& layer, ad::Var<T> x) {
  return std::visit(
      [&](const auto& op) -> ad::Var<T> {
        using Op = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<Op, ConvLayer>) {
          const auto& w = ctx.effective[op.weight];
          const auto geo = Conv2dGeometry::make(x.shape(), w.shape(), op.stride, op.padding);
          ctx.result.macs += geo.macs();
          if (op.bias != kNoSlot) return ad::conv2d(x, w, &ctx.effective[op.bias], op.stride, op.padding);
          return ad::conv2d<T>(x, w, nullptr, op.stride, op.padding);
        } else if constexpr (std::is_same_v<Op, LinearLayer>) {
          const auto& w = ctx.effective[op.weight];
          if (x.shape().size() == 2) ctx.result.macs += x.shape()[0] * w.value().numel();
          if (op.bias != kNoSlot) return ad::linear(x, w, &ctx.effective[op.bias]);
          return ad::linear<T>(x, w, nullptr);
        } else if constexpr (std::is_same_v<Op, BatchNormLayer>) {
          kernels::BatchNormForward<T> stats;
          auto y = batchnorm_forward(x, ctx.effective[op.scale], ctx.effective[op.shift],
                                     ctx.model.batchnorm_states()[op.state], ctx.opts.mode, &stats);
          if (ctx.opts.mode == Mode::Train) {
            const auto& s = x.shape();
            ctx.result.batch_stats[op.state] = std::move(stats);
            ctx.result.batch_counts[op.state] = s[0] * s[2] * s[3];
          }
          return y;
        } else if constexpr (std::is_same_v<Op, ReluLayer>) {
          return ad::relu(x);
        } else if constexpr (std::is_same_v<Op, MaxPoolLayer>) {
          return ad::max_pool2d(x, op.window);
        } else if constexpr (std::is_same_v<Op, GlobalAvgPoolLayer>) {
          return ad::global_avg_pool(x);
        } else if constexpr (std::is_same_v<Op, FlattenLayer>) {
          return ad::flatten(x);
        } else {
          auto body = run_layers(ctx, op.body, x);
          auto skip = op.shortcut.empty() ? x : run_layers(ctx, op.shortcut, x);
          return ad::relu(ad::add(body, skip));
        }
      },
      layer.op);
}

template <typename T>
ad::Var<T> run_layers(ForwardContext<T>& ctx, const std::vector<Layer>& layers, ad::Var<T> x) {
  for (const auto& layer : layers) x = run_layer(ctx, layer, x);
  return x;
}

}  // namespace

template <typename T>
Model<T>::Model(ArchSpec arch, std::vector<Layer> layers, std::vector<ParamSlot<T>> slots,
                std::vector<BatchNormState<T>> bn_states)
    : arch_(std::move(arch)), layers_(std::move(layers)), slots_(std::move(slots)), bn_(std::move(bn_states)) {
  for_each_layer(layers_, [&](const Layer& layer) {
    auto check = [&](std::size_t idx) {
      if (idx != kNoSlot && idx >= slots_.size()) throw std::out_of_range("layer refers to missing slot");
    };
    if (const auto* c = std::get_if<ConvLayer>(&layer.op)) {
      check(c->weight);
      check(c->bias);
    } else if (const auto* l = std::get_if<LinearLayer>(&layer.op)) {
      check(l->weight);
      check(l->bias);
    } else if (const auto* b = std::get_if<BatchNormLayer>(&layer.op)) {
      check(b->scale);
      check(b->shift);
      if (b->state >= bn_.size()) throw std::out_of_range("layer refers to missing batch-norm state");
    }
  });
}

template <typename T>
ParamSlot<T>& Model<T>::slot(const std::string& name) {
  for (auto& s : slots_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no parameter slot named " + name);
}

template <typename T>
const ParamSlot<T>& Model<T>::slot(const std::string& name) const {
  return const_cast<Model*>(this)->slot(name);
}

template <typename T>
std::vector<std::size_t> Model<T>::prunable_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].prunable) out.push_back(i);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.theta.numel();
  return n;
}

template <typename T>
Shape Model<T>::input_shape(std::size_t batch) const {
  return {batch, arch_.in_channels, arch_.height, arch_.width};
}

template <typename T>
BoundParameters<T> Model<T>::bind(ad::Tape<T>& tape, const ForwardOptions& opts) const {
  typename ad::Tape<T>::ScopeGuard scope(tape, "params");
  BoundParameters<T> b;
  b.leaves.resize(slots_.size());
  b.effective.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const auto& slot = slots_[i];
    const bool mask_it = opts.masked && slot.prunable;
    if (opts.trainable) {
      b.leaves[i] = tape.leaf(slot.theta, slot.name);
      b.effective.push_back(mask_it ? ad::mul(b.leaves[i], tape.constant(slot.mask, slot.name + ".mask"))
                                    : b.leaves[i]);
    } else {
      b.effective.push_back(tape.constant(mask_it ? mul(slot.theta, slot.mask) : slot.theta, slot.name));
    }
  }
  return b;
}

template <typename T>
ForwardResult<T> Model<T>::forward(const ad::Var<T>& x, const BoundParameters<T>& params, Mode mode) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != arch_.in_channels || s[2] != arch_.height || s[3] != arch_.width) {
    throw ShapeError("model " + arch_.name + " expects input " + shape_str(input_shape(s.empty() ? 0 : s[0])) +
                     ", got " + shape_str(s));
  }
  if (s[0] == 0) throw ShapeError("empty batch");
  if (params.effective.size() != slots_.size()) throw std::invalid_argument("parameters bound for another model");

  ForwardResult<T> result;
  result.params = params.leaves;
  result.batch_stats.resize(bn_.size());
  result.batch_counts.assign(bn_.size(), 0);
  ForwardOptions opts;
  opts.mode = mode;
  ForwardContext<T> ctx{*this, opts, params.effective, result};
  result.logits = run_layers(ctx, layers_, x);
  return result;
}

template <typename T>
ForwardResult<T> Model<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, const ForwardOptions& opts) const {
  return forward(x, bind(tape, opts), opts.mode);
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& x) const {
  ad::Tape<T> tape;
  auto in = tape.constant(x, "input");
  ForwardOptions opts;
  opts.mode = mode_;
  return forward(tape, in, opts).logits.value();
}

template <typename T>
void Model<T>::update_running_stats(const ForwardResult<T>& result) {
  if (result.batch_stats.size() != bn_.size()) throw std::invalid_argument("batch statistics do not match model");
  const T m = kBatchNormMomentum;
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    const auto& st = result.batch_stats[i];
    if (st.mean.empty()) continue;
    const std::size_t n = result.batch_counts[i];
    const T unbias = n > 1 ? T(n) / T(n - 1) : T(1);
    auto& rs = bn_[i];
    for (std::size_t c = 0; c < rs.running_mean.numel(); ++c) {
      rs.running_mean[c] = (T(1) - m) * rs.running_mean[c] + m * st.mean[c];
      rs.running_var[c] = (T(1) - m) * rs.running_var[c] + m * st.batch_var[c] * unbias;
    }
  }
}

template <typename T>
void Model<T>::apply_masks() {
  for (auto& s : slots_) s.apply_mask();
}

// ---------------------------------------------------------------------------
// Batch norm

template <typename T>
ad::Var<T> batchnorm_forward(const ad::Var<T>& x, const ad::Var<T>& scale, const ad::Var<T>& shift,
                             const BatchNormState<T>& state, Mode mode,
                             kernels::BatchNormForward<T>* batch_stats) {
  if (x.shape().size() != 4 || x.shape()[1] != scale.value().numel()) {
    throw ShapeError("batchnorm channel mismatch: input " + shape_str(x.shape()) + ", scale " +
                     shape_str(scale.shape()));
  }
  if (mode == Mode::Train) {
    return ad::batchnorm_train(x, scale, shift, Model<T>::kBatchNormEps, batch_stats);
  }
  return ad::batchnorm_eval(x, scale, shift, state.running_mean, state.running_var, Model<T>::kBatchNormEps);
}

// ---------------------------------------------------------------------------
// Architectures

namespace {

template <typename T>
class Builder {
 public:
  Builder(std::uint64_t seed, bool prune_linear) : rng_(seed), prune_linear_(prune_linear) {}

  Layer conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t pad,
             bool bias) {
    ConvLayer c;
    c.padding = pad;
    c.weight = add(name + ".weight", LayerKind::Conv, ParamRole::Weight, true, kaiming({out, in, k, k}, in * k * k));
    if (bias) c.bias = add(name + ".bias", LayerKind::Conv, ParamRole::Bias, false, Tensor<T>({out}, T(0)));
    return Layer{c};
  }

  Layer linear(const std::string& name, std::size_t in, std::size_t out) {
    LinearLayer l;
    l.weight = add(name + ".weight", LayerKind::Linear, ParamRole::Weight, prune_linear_, kaiming({out, in}, in));
    l.bias = add(name + ".bias", LayerKind::Linear, ParamRole::Bias, false, Tensor<T>({out}, T(0)));
    return Layer{l};
  }

  Layer batchnorm(const std::string& name, std::size_t channels) {
    BatchNormLayer b;
    b.scale = add(name + ".scale", LayerKind::BatchNorm, ParamRole::Scale, false, Tensor<T>({channels}, T(1)));
    b.shift = add(name + ".shift", LayerKind::BatchNorm, ParamRole::Shift, false, Tensor<T>({channels}, T(0)));
    b.state = bn_.size();
    bn_.push_back({Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1))});
    return Layer{b};
  }

  Model<T> finish(ArchSpec arch, std::vector<Layer> layers) {
    return Model<T>(std::move(arch), std::move(layers), std::move(slots_), std::move(bn_));
  }

 private:
  std::size_t add(std::string name, LayerKind kind, ParamRole role, bool prunable, Tensor<T> theta) {
    slots_.emplace_back(std::move(name), kind, role, prunable, std::move(theta));
    return slots_.size() - 1;
  }

  Tensor<T> kaiming(Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(std::move(shape), T(0));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng_));
    return t;
  }

  std::mt19937_64 rng_;
  bool prune_linear_;
  std::vector<ParamSlot<T>> slots_;
  std::vector<BatchNormState<T>> bn_;
};

Layer relu() { return Layer{ReluLayer{}}; }
Layer pool() { return Layer{MaxPoolLayer{2}}; }

template <typename T>
Layer residual(Builder<T>& b, const std::string& name, std::size_t in, std::size_t out) {
  ResidualBlock block;
  block.body.push_back(b.conv(name + ".conv1", in, out, 3, 1, false));
  block.body.push_back(b.batchnorm(name + ".bn1", out));
  block.body.push_back(relu());
  block.body.push_back(b.conv(name + ".conv2", out, out, 3, 1, false));
  block.body.push_back(b.batchnorm(name + ".bn2", out));
  if (in != out) {
    block.shortcut.push_back(b.conv(name + ".proj", in, out, 1, 0, false));
    block.shortcut.push_back(b.batchnorm(name + ".proj_bn", out));
  }
  return Layer{std::move(block)};
}

std::size_t pooled(std::size_t n, int times) {
  for (int i = 0; i < times; ++i) n /= 2;
  return n;
}

}  // namespace

std::vector<std::string> architecture_names() { return {"mlp-tiny", "conv-tiny", "vgg-mini", "resnet-mini"}; }

template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint64_t seed) {
  if (arch.in_channels == 0 || arch.height == 0 || arch.width == 0 || arch.num_classes == 0) {
    throw std::invalid_argument("architecture dimensions must be positive");
  }
  Builder<T> b(seed, arch.prune_linear);
  std::vector<Layer> layers;
  const std::size_t c = arch.in_channels;
  if (arch.name == "mlp-tiny") {
    layers.push_back(Layer{FlattenLayer{}});
    layers.push_back(b.linear("fc1", c * arch.height * arch.width, 64));
    layers.push_back(relu());
    layers.push_back(b.linear("fc2", 64, arch.num_classes));
  } else if (arch.name == "conv-tiny") {
    const std::size_t h = pooled(arch.height, 2), w = pooled(arch.width, 2);
    if (h == 0 || w == 0) throw ShapeError("conv-tiny needs inputs of at least 4x4");
    layers.push_back(b.conv("conv1", c, 16, 3, 1, true));
    layers.push_back(relu());
    layers.push_back(pool());
    layers.push_back(b.conv("conv2", 16, 16, 3, 1, true));
    layers.push_back(relu());
    layers.push_back(pool());
    layers.push_back(Layer{FlattenLayer{}});
    layers.push_back(b.linear("fc1", 16 * h * w, 64));
    layers.push_back(relu());
    layers.push_back(b.linear("fc2", 64, arch.num_classes));
  } else if (arch.name == "vgg-mini") {
    if (pooled(arch.height, 3) == 0 || pooled(arch.width, 3) == 0) {
      throw ShapeError("vgg-mini needs inputs of at least 8x8");
    }
    const int plan[] = {32, 32, -1, 64, 64, -1, 128, 128, 128, -1};
    std::size_t in = c;
    int idx = 1;
    for (int p : plan) {
      if (p < 0) {
        layers.push_back(pool());
        continue;
      }
      const auto out = static_cast<std::size_t>(p);
      layers.push_back(b.conv("conv" + std::to_string(idx), in, out, 3, 1, false));
      layers.push_back(b.batchnorm("bn" + std::to_string(idx), out));
      layers.push_back(relu());
      in = out;
      ++idx;
    }
    layers.push_back(Layer{GlobalAvgPoolLayer{}});
    layers.push_back(b.linear("fc", in, arch.num_classes));
  } else if (arch.name == "resnet-mini") {
    if (pooled(arch.height, 2) == 0 || pooled(arch.width, 2) == 0) {
      throw ShapeError("resnet-mini needs inputs of at least 4x4");
    }
    layers.push_back(b.conv("stem", c, 32, 3, 1, false));
    layers.push_back(b.batchnorm("stem_bn", 32));
    layers.push_back(relu());
    layers.push_back(residual(b, "block1", 32, 32));
    layers.push_back(pool());
    layers.push_back(residual(b, "block2", 32, 64));
    layers.push_back(pool());
    layers.push_back(residual(b, "block3", 64, 128));
    layers.push_back(Layer{GlobalAvgPoolLayer{}});
    layers.push_back(b.linear("fc", 128, arch.num_classes));
  } else {
    throw UnknownArchitecture("unknown architecture '" + arch.name + "'");
  }
  return b.finish(arch, std::move(layers));
}

template <typename T>
void zero_residual_branches(Model<T>& model) {
  auto& slots = model.slots();
  for_each_layer(model.layers(), [&](const Layer& layer) {
    const auto* block = std::get_if<ResidualBlock>(&layer.op);
    if (!block) return;
    for (auto it = block->body.rbegin(); it != block->body.rend(); ++it) {
      if (const auto* bn = std::get_if<BatchNormLayer>(&it->op)) {
        slots[bn->scale].theta = Tensor<T>(slots[bn->scale].theta.shape(), T(0));
        slots[bn->shift].theta = Tensor<T>(slots[bn->shift].theta.shape(), T(0));
        return;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Channel compaction

namespace {

// Keeps the listed indices along `axis` (0 or 1) of a tensor.
template <typename T>
Tensor<T> take(const Tensor<T>& t, std::size_t axis, const std::vector<std::size_t>& keep) {
  Shape shape = t.shape();
  const std::size_t outer = axis == 0 ? 1 : shape[0];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  shape[axis] = keep.size();
  Tensor<T> out(shape, T(0));
  std::size_t o = 0;
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t k : keep) {
      const std::size_t base = (a * n + k) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[o++] = t[base + i];
    }
  }
  return out;
}

template <typename T>
void take_slot(ParamSlot<T>& s, std::size_t axis, const std::vector<std::size_t>& keep) {
  s.theta = take(s.theta, axis, keep);
  s.mask = take(s.mask, axis, keep);
  s.dup = take(s.dup, axis, keep);
  s.momentum = take(s.momentum, axis, keep);
}

}  // namespace

template <typename T>
Model<T> compact_channels(const Model<T>& model) {
  std::vector<Layer> layers = model.layers();
  std::vector<ParamSlot<T>> slots = model.slots();
  std::vector<BatchNormState<T>> bn = model.batchnorm_states();

  std::vector<std::size_t> convs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<ResidualBlock>(layers[i].op)) {
      throw std::invalid_argument("channel compaction supports sequential models only");
    }
    if (std::holds_alternative<ConvLayer>(layers[i].op)) convs.push_back(i);
  }

  for (std::size_t j = 1; j < convs.size(); ++j) {
    const auto& consumer = std::get<ConvLayer>(layers[convs[j]].op);
    const auto& w = slots[consumer.weight];
    const std::size_t m = w.theta.dim(0), n = w.theta.dim(1), hw = w.theta.numel() / (m * n);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < n; ++c) {
      bool live = false;
      for (std::size_t f = 0; f < m && !live; ++f) {
        for (std::size_t k = 0; k < hw; ++k) {
          const std::size_t idx = (f * n + c) * hw + k;
          if (w.mask[idx] != T(0) && w.theta[idx] != T(0)) {
            live = true;
            break;
          }
        }
      }
      if (live) keep.push_back(c);
    }
    if (keep.empty()) keep.push_back(0);
    if (keep.size() == n) continue;

    take_slot(slots[consumer.weight], 1, keep);
    // Walk back to the producing conv, trimming everything per-channel on the way.
    for (std::size_t i = convs[j]; i-- > convs[j - 1];) {
      if (auto* c = std::get_if<ConvLayer>(&layers[i].op)) {
        take_slot(slots[c->weight], 0, keep);
        if (c->bias != kNoSlot) take_slot(slots[c->bias], 0, keep);
      } else if (auto* b = std::get_if<BatchNormLayer>(&layers[i].op)) {
        take_slot(slots[b->scale], 0, keep);
        take_slot(slots[b->shift], 0, keep);
        bn[b->state].running_mean = take(bn[b->state].running_mean, 0, keep);
        bn[b->state].running_var = take(bn[b->state].running_var, 0, keep);
      } else if (!std::holds_alternative<ReluLayer>(layers[i].op) &&
                 !std::holds_alternative<MaxPoolLayer>(layers[i].op)) {
        throw std::invalid_argument("channel compaction cannot trim across a non-channelwise layer");
      }
    }
  }
  // A trimmed producer feeding a flatten + linear would change the linear
  // fan-in; the last conv has no consumer conv, so its filters are untouched.
  Model<T> out(model.arch(), std::move(layers), std::move(slots), std::move(bn));
  out.set_mode(model.mode());
  return out;
}

// ---------------------------------------------------------------------------

#define DNR_INSTANTIATE_LAYERS(T)                                                                      \
  template struct ParamSlot<T>;                                                                        \
  template class Model<T>;                                                                             \
  template Model<T> build_model<T>(const ArchSpec&, std::uint64_t);                                    \
  template ad::Var<T> batchnorm_forward<T>(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&,   \
                                           const BatchNormState<T>&, Mode, kernels::BatchNormForward<T>*); \
  template void zero_residual_branches<T>(Model<T>&);                                                  \
  template Model<T> compact_channels<T>(const Model<T>&);

DNR_INSTANTIATE_LAYERS(float)
DNR_INSTANTIATE_LAYERS(double)

}  // namespace dnr
