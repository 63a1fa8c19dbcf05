// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation.
//
// A Tape records every operation of one forward pass in creation order, which
// is already a topological order, so backward() is a single reverse sweep that
// visits each node once. Tapes are rebuilt for every forward pass and are never
// shared between threads.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dnr/kernels.hpp"
#include "dnr/tensor.hpp"

namespace dnr::ad {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar loss with respect to the requires-grad leaves.
template <typename T>
class Gradients {
 public:
  bool contains(const Var<T>& v) const { return grads_.count(v.id()) != 0; }
  const Tensor<T>& at(const Var<T>& v) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<std::size_t, Tensor<T>> grads_;
};

template <typename T>
class Tape {
 public:
  /// Maps the output gradient to one gradient per parent. Entries for parents
  /// whose `needs` flag is false may be left empty.
  using BackwardFn =
      std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const std::vector<bool>& needs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value, std::string name = "constant");
  Var<T> leaf(Tensor<T> value, std::string name = "leaf");
  Var<T> record(std::string op, Tensor<T> value, std::vector<Var<T>> parents, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::string& scope(std::size_t id) const { return nodes_.at(id).scope; }
  /// Number of nodes recorded while the named scope was active.
  std::size_t count_in_scope(std::string_view name) const;

  /// Reverse sweep from a scalar loss. Every requires-grad leaf gets an entry,
  /// zero-filled when the loss does not depend on it.
  Gradients<T> backward(const Var<T>& loss) const;
  /// Gradient of `loss` with respect to the leaf `x`; throws if `x` does not
  /// feed into `loss`.
  Tensor<T> grad_wrt_input(const Var<T>& loss, const Var<T>& x) const;

  /// Tags nodes created during its lifetime; scopes nest with "/".
  class ScopeGuard {
   public:
    ScopeGuard(Tape& tape, const std::string& name);
    ~ScopeGuard();
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

   private:
    Tape& tape_;
    std::string previous_;
  };

 private:
  struct Node {
    std::string op;
    std::string scope;
    Tensor<T> value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Tensor<T>> sweep(const Var<T>& loss, std::vector<bool>* reached) const;

  std::vector<Node> nodes_;
  std::string scope_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// Differentiable operations. Operands must live on the same tape.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// NCHW -> N x (C*H*W).
template <typename T> Var<T> flatten(const Var<T>& a);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x (N x in) times weight^T (weight is out x in) plus bias (out), bias optional.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, std::size_t stride,
              std::size_t padding);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> max_pool2d(const Var<T>& x, std::size_t window);
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
/// Train-mode batch norm. The batch mean and biased variance are written to
/// `stats` when non-null.
template <typename T>
Var<T> batchnorm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                       kernels::BatchNormForward<T>* stats = nullptr);
template <typename T>
Var<T> batchnorm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                      const Tensor<T>& mean, const Tensor<T>& var, T eps);
/// Fused, numerically stable mean softmax cross-entropy.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace dnr::ad
