// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support/gradcheck.hpp"

using namespace dnr;
using dnr::testing::gradcheck;
using dnr::testing::project;
using dnr::testing::random_nonzero;
using dnr::testing::random_tensor;
using V = ad::Var<double>;
using Leaves = std::vector<V>;

TEST_CASE("gradient of sum is all ones") {
  ad::Tape<double> tape;
  auto theta = tape.leaf(Tensor<double>({2, 3}, 0.7));
  const auto g = tape.backward(ad::sum(theta));
  CHECK(g.at(theta) == Tensor<double>({2, 3}, 1.0));
}

TEST_CASE("drift penalty has zero gradient at its minimum") {
  std::mt19937_64 rng(1);
  const auto theta0 = random_tensor({4, 3}, rng);
  Tensor<double> mask({4, 3}, 1.0);
  mask[2] = mask[7] = 0;
  ad::Tape<double> tape;
  auto theta = tape.leaf(theta0);
  auto z = tape.constant(mul(theta0, mask));
  const auto g = tape.backward(ad::sum_squares(ad::sub(ad::mul(theta, tape.constant(mask)), z)));
  CHECK(g.at(theta) == Tensor<double>({4, 3}, 0.0));
}

TEST_CASE("leaves unrelated to the loss get zero gradients") {
  ad::Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2}, 1.0));
  auto b = tape.leaf(Tensor<double>({3}, 1.0));
  const auto g = tape.backward(ad::sum(a));
  CHECK(g.size() == 2);
  CHECK(g.at(b) == Tensor<double>({3}, 0.0));
  CHECK_THROWS(tape.grad_wrt_input(ad::sum(a), b));
}

TEST_CASE("shared subexpressions accumulate") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({3.0}));
  auto y = ad::mul(x, x);              // x^2
  auto loss = ad::sum(ad::add(y, y));  // 2x^2
  CHECK(tape.backward(loss).at(x)[0] == 12.0);
}

TEST_CASE("backward requires a scalar loss") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  CHECK_THROWS(tape.backward(x));
}

TEST_CASE("input gradient of a sum is all ones") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 2, 2, 2}, 0.3));
  CHECK(tape.grad_wrt_input(ad::sum(x), x) == Tensor<double>({1, 2, 2, 2}, 1.0));
}

TEST_CASE("input gradient of a linear softmax model matches the closed form") {
  std::mt19937_64 rng(2);
  const auto w = random_tensor({4, 6}, rng);
  const auto x0 = random_tensor({1, 6}, rng);
  const int label = 2;
  ad::Tape<double> tape;
  auto x = tape.leaf(x0);
  auto loss = ad::softmax_cross_entropy(ad::linear(x, tape.constant(w), static_cast<const V*>(nullptr)), {label});
  const auto g = tape.grad_wrt_input(loss, x);

  // (softmax(w x) - onehot) . w
  std::vector<double> z(4), p(4);
  double zmax = -1e300, norm = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 0; j < 6; ++j) z[k] += w[k * 6 + j] * x0[j];
    zmax = std::max(zmax, z[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) norm += p[k] = std::exp(z[k] - zmax);
  for (auto& v : p) v /= norm;
  p[label] -= 1;
  for (std::size_t j = 0; j < 6; ++j) {
    double e = 0;
    for (std::size_t k = 0; k < 4; ++k) e += p[k] * w[k * 6 + j];
    CHECK(g[j] == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("scopes tag recorded nodes") {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  {
    ad::Tape<double>::ScopeGuard outer(tape, "adversarial");
    auto y = ad::scale(x, 2.0);
    {
      ad::Tape<double>::ScopeGuard inner(tape, "inner");
      ad::sum(y);
    }
  }
  ad::sum(x);
  CHECK(tape.count_in_scope("adversarial") == 2);
  CHECK(tape.count_in_scope("inner") == 1);
  CHECK(tape.count_in_scope("clean") == 0);
  CHECK(tape.size() == 4);
}

// Finite-difference checks, a few random instances per op.

namespace {

constexpr double kTol = 1e-4;
constexpr int kInstances = 3;

template <typename MakeInputs>
void check_op(const char* name, MakeInputs make, const dnr::testing::Builder& build) {
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  for (int i = 0; i < kInstances; ++i) {
    const double err = gradcheck(build, make(rng));
    INFO(name << " instance " << i << " error " << err);
    CHECK(err < kTol);
  }
}

}  // namespace

TEST_CASE("finite differences: elementwise and reductions") {
  auto two = [](std::mt19937_64& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; };
  auto one = [](std::mt19937_64& r) { return std::vector{random_tensor({3, 4}, r)}; };
  check_op("add", two, [](auto& t, const Leaves& l) { return project(t, ad::add(l[0], l[1]), 1); });
  check_op("sub", two, [](auto& t, const Leaves& l) { return project(t, ad::sub(l[0], l[1]), 2); });
  check_op("mul", two, [](auto& t, const Leaves& l) { return project(t, ad::mul(l[0], l[1]), 3); });
  check_op("scale", one, [](auto& t, const Leaves& l) { return project(t, ad::scale(l[0], -1.7), 4); });
  check_op("sum", one, [](auto&, const Leaves& l) { return ad::sum(ad::mul(l[0], l[0])); });
  check_op("sum_squares", one, [](auto&, const Leaves& l) { return ad::sum_squares(l[0]); });
  check_op("reshape", one, [](auto& t, const Leaves& l) { return project(t, ad::reshape(l[0], {2, 6}), 5); });
}

TEST_CASE("finite differences: linear algebra") {
  check_op(
      "matmul", [](auto& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
      [](auto& t, const Leaves& l) { return project(t, ad::matmul(l[0], l[1]), 6); });
  check_op(
      "linear",
      [](auto& r) { return std::vector{random_tensor({3, 5}, r), random_tensor({4, 5}, r), random_tensor({4}, r)}; },
      [](auto& t, const Leaves& l) { return project(t, ad::linear(l[0], l[1], &l[2]), 7); });
  check_op(
      "conv2d",
      [](auto& r) {
        return std::vector{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)};
      },
      [](auto& t, const Leaves& l) { return project(t, ad::conv2d(l[0], l[1], &l[2], 1, 1), 8); });
  check_op(
      "conv2d stride 2",
      [](auto& r) { return std::vector{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; },
      [](auto& t, const Leaves& l) {
        return project(t, ad::conv2d(l[0], l[1], static_cast<const V*>(nullptr), 2, 0), 9);
      });
}

TEST_CASE("finite differences: activations, pooling, normalization, loss") {
  auto nchw = [](auto& r) { return std::vector{random_nonzero({2, 3, 4, 4}, r)}; };
  check_op("relu", nchw, [](auto& t, const Leaves& l) { return project(t, ad::relu(l[0]), 10); });
  check_op("max_pool2d", nchw, [](auto& t, const Leaves& l) { return project(t, ad::max_pool2d(l[0], 2), 11); });
  check_op("global_avg_pool", nchw, [](auto& t, const Leaves& l) { return project(t, ad::global_avg_pool(l[0]), 12); });
  check_op("flatten", nchw, [](auto& t, const Leaves& l) { return project(t, ad::flatten(l[0]), 13); });
  auto bn = [](auto& r) {
    return std::vector{random_tensor({3, 2, 3, 3}, r), random_tensor({2}, r, 0.5, 1.5), random_tensor({2}, r)};
  };
  check_op("batchnorm_train", bn,
           [](auto& t, const Leaves& l) { return project(t, ad::batchnorm_train(l[0], l[1], l[2], 1e-5), 14); });
  check_op("batchnorm_eval", bn, [](auto& t, const Leaves& l) {
    return project(t,
                   ad::batchnorm_eval(l[0], l[1], l[2], Tensor<double>::vector({0.1, -0.2}),
                                      Tensor<double>::vector({0.9, 1.3}), 1e-5),
                   15);
  });
  check_op(
      "softmax_cross_entropy", [](auto& r) { return std::vector{random_tensor({4, 5}, r, -3, 3)}; },
      [](auto&, const Leaves& l) { return ad::softmax_cross_entropy(l[0], {0, 4, 2, 2}); });
}
