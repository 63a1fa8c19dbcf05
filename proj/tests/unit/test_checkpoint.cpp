// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "dnr/checkpoint.hpp"
#include "dnr/engine.hpp"
#include "json.hpp"
#include "support/gradcheck.hpp"

using namespace dnr;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dnr_test_checkpoint";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) { std::ofstream(path, std::ios::binary) << bytes; }

std::uint64_t le64(const std::string& b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | static_cast<unsigned char>(b[at + i]);
  return v;
}

std::string with_header(const std::string& bytes, const nlohmann::json& header) {
  const std::uint64_t old_len = le64(bytes, 8);
  const std::string text = header.dump();
  std::string out = bytes.substr(0, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
  return out + text + bytes.substr(16 + old_len);
}

Model<float> sparse_model() {
  ArchSpec a;
  a.name = "vgg-mini";
  a.in_channels = 1;
  a.height = a.width = 8;
  auto m = build_model<float>(a, 3);
  SparsityConfig cfg;
  cfg.density = 0.3;
  init_masks(m, cfg);
  for (auto& st : m.batchnorm_states()) {
    for (std::size_t i = 0; i < st.running_mean.numel(); ++i) {
      st.running_mean[i] = 0.01f * float(i);
      st.running_var[i] = 1.0f + 0.02f * float(i);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("round trip preserves every tensor") {
  const auto m = sparse_model();
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(m, path);
  const auto back = load_checkpoint<float>(path);
  CHECK(back.arch() == m.arch());
  REQUIRE(back.slots().size() == m.slots().size());
  for (std::size_t i = 0; i < m.slots().size(); ++i) {
    CHECK(back.slots()[i].theta == m.slots()[i].theta);
    CHECK(back.slots()[i].mask == m.slots()[i].mask);
    CHECK(back.slots()[i].dup == m.slots()[i].masked());
    CHECK(back.slots()[i].momentum == Tensor<float>(m.slots()[i].theta.shape(), 0.0f));
  }
  CHECK(model_digest(back) == model_digest(m));

  auto eval_m = m;
  eval_m.set_mode(Mode::Eval);
  auto eval_back = back;
  eval_back.set_mode(Mode::Eval);
  std::mt19937_64 rng(1);
  const auto x = dnr::testing::random_tensor({4, 1, 8, 8}, rng, 0, 1).cast<float>();
  CHECK(eval_back.predict(x) == eval_m.predict(x));

  // float64 models store float32 values and load back exactly when representable
  const auto d = load_checkpoint<double>(path);
  CHECK(d.slots()[0].theta == m.slots()[0].theta.cast<double>());
}

TEST_CASE("byte layout: magic, little-endian header length, JSON header, float32 payload") {
  const auto m = sparse_model();
  const auto path = temp_path("layout.ckpt");
  save_checkpoint(m, path);
  const std::string b = slurp(path);
  CHECK(b.substr(0, 8) == "DNRCKPT1");
  const std::uint64_t hlen = le64(b, 8);
  const auto header = nlohmann::json::parse(b.substr(16, hlen));
  CHECK(header["format"] == "dnr-checkpoint");
  CHECK(header["version"] == 1);
  CHECK(header["dtype"] == "float32-le");
  CHECK(header["arch"]["name"] == "vgg-mini");
  const std::size_t payload = header["payload_bytes"];
  CHECK(b.size() == 16 + hlen + payload);

  const auto& first = header["tensors"][0];
  CHECK(first["name"] == "conv1.weight");
  CHECK(first["kind"] == "theta");
  CHECK(first["offset"] == 0);
  const auto& second = header["tensors"][1];
  CHECK(second["kind"] == "mask");
  const auto& theta = m.slots()[0].theta;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    std::uint32_t u = 0;
    for (int k = 3; k >= 0; --k) u = u << 8 | static_cast<unsigned char>(b[16 + hlen + 4 * i + k]);
    float f;
    std::memcpy(&f, &u, 4);
    CHECK(f == theta[i]);
  }
  const auto& last = header["tensors"].back();
  CHECK(last["name"] == "bn6");
  CHECK(last["kind"] == "running_var");
}

TEST_CASE("epochs=0 style checkpoint keeps masks applied") {
  const auto m = sparse_model();
  const auto path = temp_path("masked.ckpt");
  save_checkpoint(m, path);
  const auto back = load_checkpoint<float>(path);
  for (const auto& s : back.slots()) CHECK(s.theta == s.masked());
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
  const auto m = sparse_model();
  const auto good = temp_path("good.ckpt");
  save_checkpoint(m, good);
  const std::string bytes = slurp(good);
  const auto header = nlohmann::json::parse(bytes.substr(16, le64(bytes, 8)));
  const auto bad = temp_path("bad.ckpt");

  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint<float>(temp_path("nope.ckpt")), CheckpointError); }
  SUBCASE("bad magic") {
    spit(bad, "XNRCKPT1" + bytes.substr(8));
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
  SUBCASE("truncated payload") {
    spit(bad, bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
  SUBCASE("architecture mismatch") {
    auto h = header;
    h["arch"]["name"] = "conv-tiny";
    spit(bad, with_header(bytes, h));
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
  SUBCASE("shape mismatch") {
    auto h = header;
    h["tensors"][0]["shape"] = {16, 1, 3, 3};
    spit(bad, with_header(bytes, h));
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
  SUBCASE("renamed tensor") {
    auto h = header;
    h["tensors"][2]["name"] = "conv9.weight";
    spit(bad, with_header(bytes, h));
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
  SUBCASE("non-binary mask") {
    std::string b = bytes;
    const std::size_t off = 16 + le64(bytes, 8) + header["tensors"][1]["offset"].get<std::size_t>();
    const float half = 0.5f;
    std::memcpy(&b[off], &half, 4);  // little-endian host
    spit(bad, b);
    CHECK_THROWS_AS(load_checkpoint<float>(bad), CheckpointError);
  }
}

TEST_CASE("inspection lists tensors and live counts") {
  const auto m = sparse_model();
  const auto path = temp_path("inspect.ckpt");
  save_checkpoint(m, path);
  const auto text = inspect_checkpoint(path);
  CHECK(text.find("vgg-mini") != std::string::npos);
  CHECK(text.find("conv1.weight.mask") != std::string::npos);
  CHECK(text.find("live " + std::to_string(m.slot("conv1.weight").live_count()) + "/288") != std::string::npos);
}

TEST_CASE("digest changes with any weight") {
  auto m = sparse_model();
  const auto d0 = model_digest(m);
  m.slots().back().theta[0] += 1e-3f;
  CHECK(model_digest(m) != d0);
}
