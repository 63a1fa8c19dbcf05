// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dnr/layers.hpp"
#include "support/gradcheck.hpp"

using namespace dnr;
using dnr::testing::random_tensor;

namespace {

ArchSpec arch(const std::string& name, std::size_t c, std::size_t hw, std::size_t classes = 10) {
  ArchSpec a;
  a.name = name;
  a.in_channels = c;
  a.height = a.width = hw;
  a.num_classes = classes;
  return a;
}

Tensor<double> logits(const Model<double>& m, const Tensor<double>& x, const ForwardOptions& opts) {
  ad::Tape<double> tape;
  return m.forward(tape, tape.constant(x), opts).logits.value();
}

// conv 1->C 2x2 with bias, relu, flatten, linear C->2.
Model<double> two_layer(std::size_t filters) {
  std::vector<ParamSlot<double>> slots;
  slots.emplace_back("conv.weight", LayerKind::Conv, ParamRole::Weight, true, Tensor<double>({filters, 1, 2, 2}));
  slots.emplace_back("conv.bias", LayerKind::Conv, ParamRole::Bias, false, Tensor<double>({filters}));
  slots.emplace_back("fc.weight", LayerKind::Linear, ParamRole::Weight, false, Tensor<double>({2, filters}));
  slots.emplace_back("fc.bias", LayerKind::Linear, ParamRole::Bias, false, Tensor<double>({2}));
  std::vector<Layer> layers{Layer{ConvLayer{0, 1, 1, 0}}, Layer{ReluLayer{}}, Layer{FlattenLayer{}},
                            Layer{LinearLayer{2, 3}}};
  return Model<double>(arch("hand", 1, 2, 2), std::move(layers), std::move(slots), {});
}

}  // namespace

TEST_CASE("hand-computed two-layer network") {
  auto m = two_layer(1);
  m.slots()[0].theta = Tensor<double>({1, 1, 2, 2}, {0.5, -1, 1, 0.25});
  m.slots()[1].theta = Tensor<double>::vector({-0.5});
  m.slots()[2].theta = Tensor<double>::matrix({{1}, {-2}});
  m.slots()[3].theta = Tensor<double>::vector({0.1, 0.3});
  // conv: 0.5*1 - 1*2 + 1*3 + 0.25*4 - 0.5 = 2; relu 2; fc: [2 + 0.1, -4 + 0.3]
  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = logits(m, x, {});
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y[0] == doctest::Approx(2.1));
  CHECK(y[1] == doctest::Approx(-3.7));
}

TEST_CASE("a fully masked filter leaves only its bias") {
  std::mt19937_64 rng(4);
  std::vector<ParamSlot<double>> slots;
  slots.emplace_back("conv.weight", LayerKind::Conv, ParamRole::Weight, true, random_tensor({2, 3, 3, 3}, rng));
  slots.emplace_back("conv.bias", LayerKind::Conv, ParamRole::Bias, false, Tensor<double>::vector({0.3, -0.7}));
  Model<double> m(arch("conv-only", 3, 5), {Layer{ConvLayer{0, 1, 1, 1}}}, std::move(slots), {});
  for (std::size_t i = 27; i < 54; ++i) m.slots()[0].mask[i] = 0;
  const auto y = logits(m, random_tensor({2, 3, 5, 5}, rng), {});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 25; ++p) CHECK(y[(n * 2 + 1) * 25 + p] == -0.7);
}

TEST_CASE("all-ones masks reproduce the dense forward") {
  std::mt19937_64 rng(5);
  for (const auto& name : architecture_names()) {
    const auto m = build_model<double>(arch(name, 3, 8), 17);
    const auto x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      ForwardOptions masked{mode, false, true}, dense{mode, false, false};
      CHECK(logits(m, x, masked) == logits(m, x, dense));
    }
  }
}

TEST_CASE("output shapes follow the architecture") {
  for (const auto& name : architecture_names()) {
    const auto m = build_model<float>(arch(name, 1, 28), 1);
    CHECK(m.predict(Tensor<float>({3, 1, 28, 28}, 0.5f)).shape() == Shape{3, 10});
  }
  const auto m = build_model<float>(arch("conv-tiny", 1, 28), 1);
  CHECK_THROWS_AS(m.predict(Tensor<float>({1, 3, 28, 28})), ShapeError);
  CHECK_THROWS_AS(build_model<float>(arch("lenet", 1, 28), 1), UnknownArchitecture);
}

TEST_CASE("parameter counts match per-layer arithmetic") {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k; };
  auto fc = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto bn = [](std::size_t c) { return 2 * c; };

  const std::size_t vgg = conv(3, 32, 3) + conv(32, 32, 3) + conv(32, 64, 3) + conv(64, 64, 3) + conv(64, 128, 3) +
                          2 * conv(128, 128, 3) + bn(32) * 2 + bn(64) * 2 + bn(128) * 3 + fc(128, 10);
  CHECK(vgg == 436458);
  CHECK(build_model<float>(arch("vgg-mini", 3, 32), 1).parameter_count() == vgg);

  const std::size_t resnet = conv(3, 32, 3) + bn(32) + 2 * (conv(32, 32, 3) + bn(32)) + conv(32, 64, 3) +
                             conv(64, 64, 3) + 2 * bn(64) + conv(32, 64, 1) + bn(64) + conv(64, 128, 3) +
                             conv(128, 128, 3) + 2 * bn(128) + conv(64, 128, 1) + bn(128) + fc(128, 10);
  CHECK(resnet == 308650);
  CHECK(build_model<float>(arch("resnet-mini", 3, 32), 1).parameter_count() == resnet);

  const std::size_t tiny = conv(1, 16, 3) + 16 + conv(16, 16, 3) + 16 + fc(16 * 7 * 7, 64) + fc(64, 10);
  CHECK(tiny == 53370);
  CHECK(build_model<float>(arch("conv-tiny", 1, 28), 1).parameter_count() == tiny);
  CHECK(build_model<float>(arch("mlp-tiny", 1, 28), 1).parameter_count() == fc(784, 64) + fc(64, 10));
}

TEST_CASE("prunable set is the conv weights unless linear pruning is on") {
  auto a = arch("conv-tiny", 1, 28);
  auto names = [](const Model<float>& m) {
    std::vector<std::string> out;
    for (auto i : m.prunable_slots()) out.push_back(m.slots()[i].name);
    return out;
  };
  CHECK(names(build_model<float>(a, 1)) == std::vector<std::string>{"conv1.weight", "conv2.weight"});
  a.prune_linear = true;
  CHECK(names(build_model<float>(a, 1)) ==
        std::vector<std::string>{"conv1.weight", "conv2.weight", "fc1.weight", "fc2.weight"});
}

TEST_CASE("initialization is seeded and bounded") {
  const auto a = build_model<double>(arch("conv-tiny", 1, 28), 9);
  const auto b = build_model<double>(arch("conv-tiny", 1, 28), 9);
  const auto c = build_model<double>(arch("conv-tiny", 1, 28), 10);
  CHECK(a.slots()[0].theta == b.slots()[0].theta);
  CHECK_FALSE(a.slots()[0].theta == c.slots()[0].theta);
  const double bound = std::sqrt(6.0 / 9.0);
  CHECK(max_abs(a.slots()[0].theta) <= bound);
  CHECK(max_abs(a.slots()[0].theta) > 0.9 * bound);
  for (const auto& s : a.slots()) {
    CHECK(s.mask == Tensor<double>(s.theta.shape(), 1.0));
    CHECK(s.dup == s.theta);
    CHECK(s.momentum == Tensor<double>(s.theta.shape(), 0.0));
  }
}

TEST_CASE("residual blocks with zeroed branches reduce to the skip path") {
  auto m = build_model<double>(arch("resnet-mini", 3, 8), 3);
  zero_residual_branches(m);
  m.set_mode(Mode::Eval);
  std::mt19937_64 rng(6);
  const auto x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const auto& layers = m.layers();
  // stem, stem_bn, relu | block1 (identity shortcut)
  Model<double> stem(m.arch(), {layers.begin(), layers.begin() + 3}, m.slots(), m.batchnorm_states());
  Model<double> with_block(m.arch(), {layers.begin(), layers.begin() + 4}, m.slots(), m.batchnorm_states());
  CHECK(logits(with_block, x, {}) == logits(stem, x, {}));

  // block2 projects: relu(proj_bn(proj(pool(.))))
  Model<double> upto2(m.arch(), {layers.begin(), layers.begin() + 6}, m.slots(), m.batchnorm_states());
  const auto pooled = logits(Model<double>(m.arch(), {layers.begin(), layers.begin() + 5}, m.slots(),
                                           m.batchnorm_states()),
                             x, {});
  const auto proj = conv2d(pooled, m.slot("block2.proj.weight").theta, 1, 0);
  const auto eps = Model<double>::kBatchNormEps;
  const auto& st = m.batchnorm_states().back();  // unused stats stay 0/1 across the model
  CHECK(st.running_var[0] == 1.0);
  const auto expect = kernels::relu(scale(proj, 1.0 / std::sqrt(1.0 + eps)));
  const auto got = logits(upto2, x, {});
  REQUIRE(got.shape() == expect.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(8);
  ad::Tape<double> tape;
  const BatchNormState<double> state{Tensor<double>::vector({0, 0}), Tensor<double>::vector({1, 1})};

  SUBCASE("standardized input passes through") {
    auto x = random_tensor({64, 2, 2, 2}, rng);
    const auto mean = reduce(ReduceOp::Mean, x, {0, 2, 3});
    const auto var = reduce(ReduceOp::Mean, mul(x, x), {0, 2, 3});
    for (std::size_t n = 0; n < 64; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t p = 0; p < 4; ++p) {
          auto& v = x[(n * 2 + c) * 4 + p];
          v = (v - mean[c]) / std::sqrt(var[c] - mean[c] * mean[c]);
        }
    auto y = batchnorm_forward(tape.constant(x), tape.constant(Tensor<double>({2}, 1.0)),
                               tape.constant(Tensor<double>({2}, 0.0)), state, Mode::Train, static_cast<kernels::BatchNormForward<double>*>(nullptr));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-4));
  }

  SUBCASE("train mode output has mean shift and std scale") {
    const auto x = random_tensor({128, 2, 1, 1}, rng, -2, 6);
    const auto scale_t = Tensor<double>::vector({2.0, 0.5}), shift_t = Tensor<double>::vector({0.5, -1.0});
    const auto y = batchnorm_forward(tape.constant(x), tape.constant(scale_t), tape.constant(shift_t), state,
                                     Mode::Train, static_cast<kernels::BatchNormForward<double>*>(nullptr))
                       .value();
    const auto mean = reduce(ReduceOp::Mean, y, {0, 2, 3});
    const auto sq = reduce(ReduceOp::Mean, mul(y, y), {0, 2, 3});
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(mean[c] - shift_t[c]) < 1e-3);
      CHECK(std::abs(std::sqrt(sq[c] - mean[c] * mean[c]) - scale_t[c]) < 1e-3);
    }
  }

  SUBCASE("eval mode is deterministic and uses running stats") {
    const BatchNormState<double> s{Tensor<double>::vector({1, -1}), Tensor<double>::vector({4, 0.25})};
    const Tensor<double> x({1, 2, 1, 1}, {3, 0});
    auto run = [&] {
      return batchnorm_forward(tape.constant(x), tape.constant(Tensor<double>({2}, 1.0)),
                               tape.constant(Tensor<double>({2}, 0.0)), s, Mode::Eval, static_cast<kernels::BatchNormForward<double>*>(nullptr))
          .value();
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(a[0] == doctest::Approx(2 / std::sqrt(4 + 1e-5)));
    CHECK(a[1] == doctest::Approx(1 / std::sqrt(0.25 + 1e-5)));
  }
}

TEST_CASE("running statistics use momentum 0.1 and the unbiased variance") {
  auto m = build_model<double>(arch("vgg-mini", 1, 8), 2);
  std::mt19937_64 rng(9);
  const auto x = random_tensor({4, 1, 8, 8}, rng, 0, 1);
  ad::Tape<double> tape;
  ForwardOptions opts{Mode::Train, false, true};
  const auto r = m.forward(tape, tape.constant(x), opts);
  m.update_running_stats(r);

  const auto y = conv2d(x, m.slot("conv1.weight").theta, 1, 1);  // first BN input
  const double n = 4 * 8 * 8;
  const auto mean = reduce(ReduceOp::Mean, y, {0, 2, 3});
  const auto sq = reduce(ReduceOp::Mean, mul(y, y), {0, 2, 3});
  const auto& st = m.batchnorm_states()[0];
  for (std::size_t c = 0; c < 32; ++c) {
    const double var = (sq[c] - mean[c] * mean[c]) * n / (n - 1);
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * mean[c]).epsilon(1e-9));
    CHECK(st.running_var[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-9));
  }
}

TEST_CASE("apply_masks zeroes masked weights") {
  auto m = build_model<float>(arch("conv-tiny", 1, 8), 1);
  auto& s = m.slot("conv2.weight");
  s.mask[5] = 0;
  m.apply_masks();
  CHECK(s.theta[5] == 0.0f);
  CHECK(s.live_count() == s.theta.numel() - 1);
}

TEST_CASE("channel compaction matches the masked model") {
  auto m = build_model<double>(arch("vgg-mini", 2, 8), 4);
  std::mt19937_64 rng(10);
  // drop input channels 1 and 5 of conv2 and channel 0 of conv4
  auto kill = [&](const std::string& name, std::size_t c) {
    auto& s = m.slot(name);
    const std::size_t M = s.theta.dim(0), N = s.theta.dim(1), k = s.theta.dim(2) * s.theta.dim(3);
    for (std::size_t f = 0; f < M; ++f)
      for (std::size_t j = 0; j < k; ++j) s.mask[(f * N + c) * k + j] = 0;
  };
  kill("conv2.weight", 1);
  kill("conv2.weight", 5);
  kill("conv4.weight", 0);
  m.apply_masks();
  for (auto& st : m.batchnorm_states())
    for (auto& v : st.running_mean.data()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  m.set_mode(Mode::Eval);

  const auto small = compact_channels(m);
  CHECK(small.slot("conv1.weight").theta.shape() == Shape{30, 2, 3, 3});
  CHECK(small.slot("bn1.scale").theta.shape() == Shape{30});
  CHECK(small.slot("conv2.weight").theta.shape() == Shape{32, 30, 3, 3});
  CHECK(small.slot("conv4.weight").theta.shape() == Shape{64, 63, 3, 3});
  CHECK(small.parameter_count() < m.parameter_count());

  const auto x = random_tensor({3, 2, 8, 8}, rng, 0, 1);
  ad::Tape<double> t1, t2;
  const auto a = m.forward(t1, t1.constant(x), {});
  const auto b = small.forward(t2, t2.constant(x), ForwardOptions{Mode::Eval, false, false});
  for (std::size_t i = 0; i < a.logits.value().numel(); ++i)
    CHECK(b.logits.value()[i] == doctest::Approx(a.logits.value()[i]).epsilon(1e-12));
  CHECK(b.macs < a.macs);

  auto res = build_model<double>(arch("resnet-mini", 1, 8), 1);
  CHECK_THROWS(compact_channels(res));
}
