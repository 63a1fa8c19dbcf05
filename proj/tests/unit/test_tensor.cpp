// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "dnr/kernels.hpp"
#include "dnr/tensor.hpp"

using namespace dnr;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<double> c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  return c;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t M = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({N, M, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = long(oy * stride + i) - long(pad), ix = long(ox * stride + j) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                s += x[((n * C + c) * H + iy) * W + ix] * w[((m * C + c) * kh + i) * kw + j];
              }
          y[((n * M + m) * OH + oy) * OW + ox] = s;
        }
  return y;
}

void check_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("shape and data length must agree") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), ShapeError);
}

TEST_CASE("elementwise examples") {
  const auto s = sign(Tensor<double>::vector({-0.3, 0.0, 2.1}));
  CHECK(s.storage() == std::vector<double>{-1, 0, 1});
  const auto c = clamp(Tensor<double>::vector({-0.2, 0.5, 1.4}), 0.0, 1.0);
  CHECK(c.storage() == std::vector<double>{0, 0.5, 1});
  CHECK(add(Tensor<double>::vector({1, 2}), Tensor<double>::vector({3, 4})).storage() == std::vector<double>{4, 6});
  CHECK(abs(Tensor<double>::vector({-2, 3})).storage() == std::vector<double>{2, 3});
  CHECK(maximum(Tensor<double>::vector({1, 5}), Tensor<double>::vector({3, 4})).storage() ==
        std::vector<double>{3, 5});
  CHECK(mul(Tensor<double>::vector({2, 3}), Tensor<double>::vector({4, 5})).storage() == std::vector<double>{8, 15});
  CHECK(sub(Tensor<double>::vector({2, 3}), Tensor<double>::vector({4, 5})).storage() ==
        std::vector<double>{-2, -2});
}

TEST_CASE("elementwise rejects mismatched shapes") {
  CHECK_THROWS_AS(add(Tensor<float>({2}), Tensor<float>({3})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor<float>({2, 1}), Tensor<float>({1, 2})), ShapeError);
}

TEST_CASE("non-finite results are errors") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(add(Tensor<double>::vector({inf}), Tensor<double>::vector({1})), NumericalError);
  CHECK_THROWS_AS(scale(Tensor<double>::vector({1e308}), 10.0), NumericalError);
  CHECK_THROWS_AS(ensure_finite(Tensor<double>::vector({std::nan("")}), "x"), NumericalError);
}

TEST_CASE("matmul examples") {
  const auto id = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto b = Tensor<double>::matrix({{5, 6}, {7, 8}});
  CHECK(matmul(id, b) == b);
  CHECK(matmul(Tensor<double>::matrix({{1, 2}}), Tensor<double>::matrix({{3}, {4}})).storage() ==
        std::vector<double>{11});
  CHECK_THROWS_AS(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST_CASE("matmul matches the triple loop") {
  std::mt19937_64 rng(3);
  const auto a = random_tensor<double>({4, 5}, rng), b = random_tensor<double>({5, 3}, rng);
  check_close(matmul(a, b), naive_matmul(a, b), 1e-12);
  check_close(matmul_tn(transpose(a), b), naive_matmul(a, b), 1e-12);
  check_close(matmul_nt(a, transpose(b)), naive_matmul(a, b), 1e-12);
  const auto fa = a.cast<float>(), fb = b.cast<float>();
  const auto fc = matmul(fa, fb).cast<double>();
  check_close(fc, naive_matmul(a, b), 1e-5);
}

TEST_CASE("matmul matches the triple loop across shapes") {
  std::mt19937_64 rng(4);
  for (std::size_t m : {1u, 3u, 17u, 32u, 64u})
    for (std::size_t n : {1u, 5u, 144u, 288u})
      for (std::size_t k : {1u, 16u, 49u, 196u}) {
        INFO(m << "x" << k << " times " << k << "x" << n);
        const auto a = random_tensor<double>({m, k}, rng), b = random_tensor<double>({k, n}, rng);
        const auto expect = naive_matmul(a, b);
        check_close(matmul(a, b), expect, 1e-11);
        check_close(matmul_tn(transpose(a), b), expect, 1e-11);
        check_close(matmul_nt(a, transpose(b)), expect, 1e-11);
        check_close(matmul(a.cast<float>(), b.cast<float>()).cast<double>(), expect, 1e-4);
      }
}

TEST_CASE("conv2d examples") {
  const Tensor<double> ones({1, 1, 3, 3}, 1.0);
  CHECK(conv2d(ones, ones, 1, 0).storage() == std::vector<double>{9});

  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({2, 3, 6, 5}, rng);
  Tensor<double> delta({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) delta[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  CHECK(conv2d(x, delta, 1, 1) == x);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  for (std::size_t pad : {0u, 1u}) check_close(conv2d(x, w, 1, pad), naive_conv(x, w, 1, pad), 1e-12);
  const auto odd = random_tensor<double>({2, 3, 9, 9}, rng);
  for (std::size_t pad : {0u, 1u}) check_close(conv2d(odd, w, 2, pad), naive_conv(odd, w, 2, pad), 1e-12);
  CHECK_THROWS_AS(conv2d(x, w, 2, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, random_tensor<double>({4, 2, 3, 3}, rng), 1, 0), ShapeError);
}

TEST_CASE("conv2d backward is the adjoint of the forward") {
  // <conv(x, w), g> == <x, dX(g)> == <w, dW(g)>
  std::mt19937_64 rng(11);
  const auto x = random_tensor<double>({2, 3, 7, 7}, rng);
  const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  for (std::size_t stride : {1u, 2u}) {
    const auto y = conv2d(x, w, stride, 1);
    const auto g = random_tensor<double>(y.shape(), rng);
    const double lhs = sum(mul(y, g));
    CHECK(sum(mul(x, conv2d_backward_input(g, w, x.shape(), stride, 1))) == doctest::Approx(lhs).epsilon(1e-12));
    CHECK(sum(mul(w, conv2d_backward_weight(g, x, w.shape(), stride, 1))) == doctest::Approx(lhs).epsilon(1e-12));
  }
}

TEST_CASE("geometry counts multiply-accumulates") {
  const auto g = Conv2dGeometry::make({2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1);
  CHECK(g.output_shape() == Shape{2, 4, 8, 8});
  CHECK(g.macs() == 2u * 4 * 8 * 8 * 3 * 3 * 3);
}

TEST_CASE("reduce examples") {
  CHECK(sum(Tensor<double>::vector({1, 2, 3})) == 6.0);
  CHECK(sum_squares(Tensor<double>::vector({3, 4})) == 25.0);
  CHECK(reduce(ReduceOp::L2Norm, Tensor<double>::vector({3, 4}), {0}).item() == 5.0);
  CHECK(argmax(Tensor<double>::vector({2, 7, 7})) == 1);
  CHECK(reduce(ReduceOp::ArgMax, Tensor<double>::vector({2, 7, 7}), {0}).item() == 1.0);

  const auto m = Tensor<double>::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(reduce(ReduceOp::Sum, m, {0}).storage() == std::vector<double>{5, 7, 9});
  CHECK(reduce(ReduceOp::Mean, m, {1}).storage() == std::vector<double>{2, 5});
  CHECK(reduce(ReduceOp::Max, m, {1, 0}).storage() == std::vector<double>{6});
  CHECK(reduce(ReduceOp::SumSquares, m, {1}).storage() == std::vector<double>{14, 77});
  CHECK(argmax_rows(Tensor<double>::matrix({{0, 3, 3}, {9, 1, 2}})) == std::vector<std::size_t>{1, 0});
  CHECK_THROWS_AS(reduce(ReduceOp::Sum, m, {0, 0}), ShapeError);
  CHECK_THROWS_AS(reduce(ReduceOp::Sum, m, {2}), ShapeError);
}

TEST_CASE("pooling and cross-entropy kernels") {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = double(i % 5);
  const auto p = kernels::max_pool2d(x, 2);
  CHECK(p.output.storage() == std::vector<double>{4, 3, 4, 4});
  const auto gap = kernels::global_avg_pool(x);
  CHECK(gap.item() == doctest::Approx(sum(x) / 16));

  // two equal logits: CE = log 2
  const auto logits = Tensor<double>::matrix({{1000, 1000}});
  CHECK(kernels::softmax_cross_entropy(logits, {0}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS(kernels::softmax_cross_entropy(logits, {2}));
}

TEST_CASE("batchnorm train output has zero mean and unit variance per channel") {
  std::mt19937_64 rng(13);
  const auto x = random_tensor<double>({128, 2, 3, 3}, rng, -3, 5);
  const auto y = kernels::batchnorm_train(x, Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0), 1e-5);
  const auto mean = reduce(ReduceOp::Mean, y.output, {0, 2, 3});
  const auto sq = reduce(ReduceOp::Mean, mul(y.output, y.output), {0, 2, 3});
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(std::abs(mean[c]) < 1e-9);
    CHECK(sq[c] == doctest::Approx(1.0).epsilon(1e-4));
  }
}
