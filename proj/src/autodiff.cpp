// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace dnr::ad {

template <typename T>
const Tensor<T>& Gradients<T>::at(const Var<T>& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id()));
  }
  return it->second;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value, std::string name) {
  if (value.empty()) throw ShapeError("tape constant must not be empty");
  nodes_.push_back(Node{std::move(name), scope_, std::move(value), {}, {}, false, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, std::string name) {
  if (value.empty()) throw ShapeError("tape leaf must not be empty");
  nodes_.push_back(Node{std::move(name), scope_, std::move(value), {}, {}, true, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> value, std::vector<Var<T>> parents,
                       BackwardFn backward) {
  Node node{std::move(op), scope_, std::move(value), {}, std::move(backward), false, false};
  node.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (&p.tape() != this) throw std::invalid_argument("operands live on different tapes");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
std::size_t Tape<T>::count_in_scope(std::string_view name) const {
  std::size_t n = 0;
  for (const auto& node : nodes_) {
    const std::string_view s = node.scope;
    // Match the scope itself or any nested scope below it.
    for (std::size_t pos = 0; pos <= s.size();) {
      const std::size_t end = std::min(s.find('/', pos), s.size());
      if (s.substr(pos, end - pos) == name) {
        ++n;
        break;
      }
      pos = end + 1;
    }
  }
  return n;
}

template <typename T>
Tape<T>::ScopeGuard::ScopeGuard(Tape& tape, const std::string& name)
    : tape_(tape), previous_(tape.scope_) {
  tape_.scope_ = previous_.empty() ? name : previous_ + "/" + name;
}

template <typename T>
Tape<T>::ScopeGuard::~ScopeGuard() {
  tape_.scope_ = previous_;
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::sweep(const Var<T>& loss, std::vector<bool>* reached) const {
  if (&loss.tape() != this) throw std::invalid_argument("loss lives on a different tape");
  const Tensor<T>& lv = nodes_[loss.id()].value;
  if (lv.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(lv.shape()));

  std::vector<Tensor<T>> grads(nodes_.size());
  if (reached) reached->assign(nodes_.size(), false);
  grads[loss.id()] = Tensor<T>(lv.shape(), T(1));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads[id].empty() || !node.requires_grad) continue;
    if (reached) (*reached)[id] = true;
    if (node.is_leaf) continue;
    std::vector<bool> needs(node.parents.size());
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      needs[i] = nodes_[node.parents[i]].requires_grad;
    }
    auto parent_grads = node.backward(grads[id], needs);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      if (!needs[i]) continue;
      Tensor<T>& g = parent_grads.at(i);
      if (g.empty()) continue;
      const std::size_t pid = node.parents[i];
      if (g.shape() != nodes_[pid].value.shape()) {
        throw ShapeError("backward of '" + node.op + "' produced gradient " + shape_str(g.shape()) +
                         " for operand " + shape_str(nodes_[pid].value.shape()));
      }
      for (T v : g.data()) {
        if (!std::isfinite(v)) {
          throw NumericalError("non-finite gradient while backpropagating '" + node.op + "'");
        }
      }
      if (grads[pid].empty()) {
        grads[pid] = std::move(g);
      } else {
        auto dst = grads[pid].data();
        auto src = g.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    // Interior gradients are no longer needed once propagated.
    if (id != loss.id()) grads[id] = Tensor<T>();
  }
  return grads;
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  auto grads = sweep(loss, nullptr);
  Gradients<T> out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad) continue;
    out.grads_.emplace(id, grads[id].empty() ? Tensor<T>(node.value.shape()) : std::move(grads[id]));
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::grad_wrt_input(const Var<T>& loss, const Var<T>& x) const {
  if (&x.tape() != this) throw std::invalid_argument("input lives on a different tape");
  if (!nodes_[x.id()].is_leaf || !nodes_[x.id()].requires_grad) {
    throw std::invalid_argument("grad_wrt_input: input must be a requires-grad leaf");
  }
  std::vector<bool> reached;
  auto grads = sweep(loss, &reached);
  if (!reached[x.id()]) throw std::invalid_argument("grad_wrt_input: input is not part of the loss graph");
  return std::move(grads[x.id()]);
}

namespace {

template <typename T>
void same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  return a.tape().record("add", dnr::add(a.value(), b.value()), {a, b},
                         [](const Tensor<T>& g, const std::vector<bool>&) {
                           return std::vector<Tensor<T>>{g, g};
                         });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  return a.tape().record("sub", dnr::sub(a.value(), b.value()), {a, b},
                         [](const Tensor<T>& g, const std::vector<bool>& needs) {
                           return std::vector<Tensor<T>>{
                               g, needs[1] ? dnr::scale(g, T(-1)) : Tensor<T>()};
                         });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record("mul", dnr::mul(a.value(), b.value()), {a, b},
                      [tape, ia, ib](const Tensor<T>& g, const std::vector<bool>& needs) {
                        return std::vector<Tensor<T>>{
                            needs[0] ? dnr::mul(g, tape->value(ib)) : Tensor<T>(),
                            needs[1] ? dnr::mul(g, tape->value(ia)) : Tensor<T>()};
                      });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return a.tape().record("scale", dnr::scale(a.value(), s), {a},
                         [s](const Tensor<T>& g, const std::vector<bool>&) {
                           return std::vector<Tensor<T>>{dnr::scale(g, s)};
                         });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const Shape shape = a.shape();
  return a.tape().record("sum", Tensor<T>::scalar(dnr::sum(a.value())), {a},
                         [shape](const Tensor<T>& g, const std::vector<bool>&) {
                           return std::vector<Tensor<T>>{Tensor<T>(shape, g.item())};
                         });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id();
  return tape->record("sum_squares", Tensor<T>::scalar(dnr::sum_squares(a.value())), {a},
                      [tape, ia](const Tensor<T>& g, const std::vector<bool>&) {
                        return std::vector<Tensor<T>>{dnr::scale(tape->value(ia), T(2) * g.item())};
                      });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  const Shape original = a.shape();
  return a.tape().record("reshape", a.value().reshaped(std::move(shape)), {a},
                         [original](const Tensor<T>& g, const std::vector<bool>&) {
                           return std::vector<Tensor<T>>{g.reshaped(original)};
                         });
}

template <typename T>
Var<T> flatten(const Var<T>& a) {
  const std::size_t n = a.shape().at(0);
  return reshape(a, Shape{n, a.value().numel() / n});
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  Tape<T>* tape = &a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record("matmul", dnr::matmul(a.value(), b.value()), {a, b},
                      [tape, ia, ib](const Tensor<T>& g, const std::vector<bool>& needs) {
                        return std::vector<Tensor<T>>{
                            needs[0] ? dnr::matmul_nt(g, tape->value(ib)) : Tensor<T>(),
                            needs[1] ? dnr::matmul_tn(tape->value(ia), g) : Tensor<T>()};
                      });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  same_tape(x, weight);
  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id(), iw = weight.id();
  Tensor<T> out = dnr::matmul_nt(x.value(), weight.value());
  std::vector<Var<T>> parents{x, weight};
  if (bias) {
    same_tape(x, *bias);
    out = kernels::add_row_bias(out, bias->value());
    parents.push_back(*bias);
  }
  const bool has_bias = bias != nullptr;
  return tape->record(
      "linear", std::move(out), std::move(parents),
      [tape, ix, iw, has_bias](const Tensor<T>& g, const std::vector<bool>& needs) {
        std::vector<Tensor<T>> r(has_bias ? 3 : 2);
        if (needs[0]) r[0] = dnr::matmul(g, tape->value(iw));
        if (needs[1]) r[1] = dnr::matmul_tn(g, tape->value(ix));
        if (has_bias && needs[2]) r[2] = kernels::column_sum(g);
        return r;
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, std::size_t stride,
              std::size_t padding) {
  same_tape(x, weight);
  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id(), iw = weight.id();
  Tensor<T> out = dnr::conv2d(x.value(), weight.value(), stride, padding);
  std::vector<Var<T>> parents{x, weight};
  if (bias) {
    same_tape(x, *bias);
    out = kernels::add_channel_bias(out, bias->value());
    parents.push_back(*bias);
  }
  const bool has_bias = bias != nullptr;
  return tape->record(
      "conv2d", std::move(out), std::move(parents),
      [tape, ix, iw, has_bias, stride, padding](const Tensor<T>& g, const std::vector<bool>& needs) {
        std::vector<Tensor<T>> r(has_bias ? 3 : 2);
        const Tensor<T>& xv = tape->value(ix);
        const Tensor<T>& wv = tape->value(iw);
        if (needs[0]) r[0] = dnr::conv2d_backward_input(g, wv, xv.shape(), stride, padding);
        if (needs[1]) r[1] = dnr::conv2d_backward_weight(g, xv, wv.shape(), stride, padding);
        if (has_bias && needs[2]) r[2] = kernels::channel_sum(g);
        return r;
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id();
  return tape->record("relu", kernels::relu(x.value()), {x},
                      [tape, ix](const Tensor<T>& g, const std::vector<bool>&) {
                        return std::vector<Tensor<T>>{kernels::relu_backward(g, tape->value(ix))};
                      });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, std::size_t window) {
  auto pooled = kernels::max_pool2d(x.value(), window);
  const Shape in_shape = x.shape();
  return x.tape().record(
      "max_pool2d", std::move(pooled.output), {x},
      [argmax = std::move(pooled.argmax), in_shape](const Tensor<T>& g, const std::vector<bool>&) {
        return std::vector<Tensor<T>>{kernels::max_pool2d_backward(g, argmax, in_shape)};
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape in_shape = x.shape();
  return x.tape().record("global_avg_pool", kernels::global_avg_pool(x.value()), {x},
                         [in_shape](const Tensor<T>& g, const std::vector<bool>&) {
                           return std::vector<Tensor<T>>{
                               kernels::global_avg_pool_backward(g, in_shape)};
                         });
}

template <typename T>
Var<T> batchnorm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                       kernels::BatchNormForward<T>* stats) {
  same_tape(x, gamma);
  same_tape(x, beta);
  if (x.shape().size() != 4 || x.shape()[0] < 2) {
    throw ShapeError("batchnorm in train mode needs an NCHW batch of at least 2, got " +
                     shape_str(x.shape()));
  }
  Tape<T>* tape = &x.tape();
  const std::size_t ig = gamma.id();
  auto fwd = kernels::batchnorm_train(x.value(), gamma.value(), beta.value(), eps);
  if (stats) {
    stats->mean = fwd.mean;
    stats->batch_var = fwd.batch_var;
  }
  Tensor<T> out = std::move(fwd.output);
  fwd.output = Tensor<T>();
  return tape->record("batchnorm", std::move(out), {x, gamma, beta},
                      [tape, ig, fwd = std::move(fwd)](const Tensor<T>& g, const std::vector<bool>&) {
                        auto r = kernels::batchnorm_train_backward(g, fwd, tape->value(ig));
                        return std::vector<Tensor<T>>{std::move(r.input), std::move(r.gamma),
                                                      std::move(r.beta)};
                      });
}

template <typename T>
Var<T> batchnorm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                      const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  Tape<T>* tape = &x.tape();
  const std::size_t ix = x.id(), ig = gamma.id();
  return tape->record(
      "batchnorm_eval",
      kernels::batchnorm_eval(x.value(), gamma.value(), beta.value(), mean, var, eps),
      {x, gamma, beta},
      [tape, ix, ig, mean, var, eps](const Tensor<T>& g, const std::vector<bool>&) {
        auto r = kernels::batchnorm_eval_backward(g, tape->value(ix), tape->value(ig), mean, var, eps);
        return std::vector<Tensor<T>>{std::move(r.input), std::move(r.gamma), std::move(r.beta)};
      });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  Tensor<T> probs;
  const T loss = kernels::softmax_cross_entropy(logits.value(), labels, &probs);
  return logits.tape().record(
      "softmax_cross_entropy", Tensor<T>::scalar(loss), {logits},
      [probs = std::move(probs), labels](const Tensor<T>& g, const std::vector<bool>&) {
        return std::vector<Tensor<T>>{kernels::softmax_cross_entropy_backward(probs, labels, g.item())};
      });
}

#define DNR_INSTANTIATE_AUTODIFF(T)                                                            \
  template class Gradients<T>;                                                                 \
  template class Tape<T>;                                                                      \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale<T>(const Var<T>&, T);                                                  \
  template Var<T> sum<T>(const Var<T>&);                                                       \
  template Var<T> sum_squares<T>(const Var<T>&);                                               \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                            \
  template Var<T> flatten<T>(const Var<T>&);                                                   \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>*);                      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>*, std::size_t,          \
                            std::size_t);                                                      \
  template Var<T> relu<T>(const Var<T>&);                                                      \
  template Var<T> max_pool2d<T>(const Var<T>&, std::size_t);                                   \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                           \
  template Var<T> batchnorm_train<T>(const Var<T>&, const Var<T>&, const Var<T>&, T,           \
                                     kernels::BatchNormForward<T>*);                           \
  template Var<T> batchnorm_eval<T>(const Var<T>&, const Var<T>&, const Var<T>&,               \
                                    const Tensor<T>&, const Tensor<T>&, T);                    \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, const std::vector<int>&);

DNR_INSTANTIATE_AUTODIFF(float)
DNR_INSTANTIATE_AUTODIFF(double)

}  // namespace dnr::ad
