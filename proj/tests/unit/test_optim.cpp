// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "dnr/optim.hpp"

using namespace dnr;

namespace {

std::vector<ParamSlot<double>> one_slot(std::vector<double> theta) {
  std::vector<ParamSlot<double>> s;
  const std::size_t n = theta.size();
  s.emplace_back("w", LayerKind::Conv, ParamRole::Weight, true, Tensor<double>({n}, std::move(theta)));
  return s;
}

}  // namespace

TEST_CASE("plain SGD without momentum or decay") {
  auto s = one_slot({1.0, -2.0});
  sgd_step(s, {Tensor<double>::vector({0.5, -1.0})}, {0.1, 0.0, 0.0});
  CHECK(s[0].theta[0] == doctest::Approx(0.95));
  CHECK(s[0].theta[1] == doctest::Approx(-1.9));
}

TEST_CASE("velocity decays geometrically under zero gradient") {
  auto s = one_slot({0.0});
  s[0].momentum[0] = 1.0;
  for (int k = 1; k <= 5; ++k) {
    sgd_step(s, {Tensor<double>::vector({0.0})}, {0.1, 0.9, 0.0});
    CHECK(s[0].momentum[0] == doctest::Approx(std::pow(0.9, k)));
  }
}

TEST_CASE("two steps on a scalar quadratic follow the recurrence") {
  // f(w) = 0.5 * a * w^2, g = a * w
  const double a = 3.0, lr = 0.05, mu = 0.9, wd = 0.01;
  auto s = one_slot({2.0});
  double w = 2.0, v = 0.0;
  for (int step = 0; step < 2; ++step) {
    sgd_step(s, {Tensor<double>::vector({a * s[0].theta[0]})}, {lr, mu, wd});
    v = mu * v + a * w + wd * w;
    w = w - lr * v;
    CHECK(s[0].theta[0] == doctest::Approx(w).epsilon(1e-15));
    CHECK(s[0].momentum[0] == doctest::Approx(v).epsilon(1e-15));
  }
}

TEST_CASE("masked positions stay exactly zero while their velocity decays") {
  auto s = one_slot({1.0, 1.0});
  s[0].mask[1] = 0;
  s[0].apply_mask();
  s[0].momentum[1] = 2.0;
  sgd_step(s, {Tensor<double>::vector({0.3, 0.0})}, {0.1, 0.9, 5e-4});
  CHECK(s[0].theta[1] == 0.0);
  CHECK(s[0].momentum[1] == doctest::Approx(1.8));
}

TEST_CASE("bad gradients are rejected") {
  auto s = one_slot({1.0});
  CHECK_THROWS_AS(sgd_step(s, {Tensor<double>::vector({1.0, 2.0})}, {}), ShapeError);
  CHECK_THROWS(sgd_step(s, {}, {}));
  CHECK_THROWS_AS(sgd_step(s, {Tensor<double>::vector({std::numeric_limits<double>::quiet_NaN()})}, {}),
                  NumericalError);
}

TEST_CASE("step schedule") {
  const StepSchedule sched;
  CHECK(lr_at_epoch(sched, 0) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(sched, 79) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(sched, 80) == doctest::Approx(0.02));
  CHECK(lr_at_epoch(sched, 100) == doctest::Approx(0.02));
  CHECK(lr_at_epoch(sched, 170) == doctest::Approx(0.0008));
  CHECK(lr_at_epoch({0.1, {}, 0.2}, 500) == 0.1);
  CHECK_THROWS(lr_at_epoch(sched, -1));
}
