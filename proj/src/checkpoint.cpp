// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace dnr {

namespace {

using nlohmann::json;

struct Entry {
  std::string name;
  std::string kind;  // theta | mask | running_mean | running_var
  Shape shape;
};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void put_f32(std::string& out, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const float f = static_cast<float>(t[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  }
}

template <typename T>
void get_f32(const unsigned char* p, Tensor<T>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i, p += 4) {
    const std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                            std::uint32_t(p[3]) << 24;
    float f;
    std::memcpy(&f, &u, 4);
    t[i] = static_cast<T>(f);
  }
}

// Payload order: theta and mask per slot, then running mean and variance per
// batch norm.
template <typename M, typename F>
void for_each_tensor(M& model, F&& f) {
  for (auto& s : model.slots()) {
    f(s.name, "theta", s.theta);
    f(s.name, "mask", s.mask);
  }
  auto& bn = model.batchnorm_states();
  for (std::size_t i = 0; i < bn.size(); ++i) {
    const std::string name = "bn" + std::to_string(i);
    f(name, "running_mean", bn[i].running_mean);
    f(name, "running_var", bn[i].running_var);
  }
}

json arch_json(const ArchSpec& a) {
  return json{{"name", a.name},
              {"in_channels", a.in_channels},
              {"height", a.height},
              {"width", a.width},
              {"num_classes", a.num_classes},
              {"prune_linear", a.prune_linear}};
}

struct RawCheckpoint {
  json header;
  std::string bytes;
  std::size_t payload_offset = 0;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  RawCheckpoint raw;
  raw.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (raw.bytes.size() < 16 || std::memcmp(raw.bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path + ": not a DNR checkpoint (bad magic)");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(raw.bytes.data());
  const std::uint64_t hlen = get_u64(p + 8);
  if (hlen > raw.bytes.size() - 16) throw CheckpointError(path + ": truncated header");
  try {
    raw.header = json::parse(raw.bytes.begin() + 16, raw.bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(path + ": malformed header: " + e.what());
  }
  raw.payload_offset = 16 + hlen;
  return raw;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  json tensors = json::array();
  std::string payload;
  for_each_tensor(model, [&](const std::string& name, const char* kind, const Tensor<T>& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", payload.size()}});
    put_f32(payload, t);
  });
  json header{{"format", "dnr-checkpoint"},
              {"version", 1},
              {"dtype", "float32-le"},
              {"arch", arch_json(model.arch())},
              {"tensors", tensors},
              {"payload_bytes", payload.size()}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_u64(out, text.size());
  out += text;
  out += payload;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  const RawCheckpoint raw = read_raw(path);
  ArchSpec arch;
  try {
    const auto& a = raw.header.at("arch");
    arch.name = a.at("name").get<std::string>();
    arch.in_channels = a.at("in_channels").get<std::size_t>();
    arch.height = a.at("height").get<std::size_t>();
    arch.width = a.at("width").get<std::size_t>();
    arch.num_classes = a.at("num_classes").get<std::size_t>();
    arch.prune_linear = a.at("prune_linear").get<bool>();
  } catch (const json::exception& e) {
    throw CheckpointError(path + ": bad arch record: " + e.what());
  }
  Model<T> model = build_model<T>(arch, 0);

  const std::size_t payload_size = raw.bytes.size() - raw.payload_offset;
  const auto* payload = reinterpret_cast<const unsigned char*>(raw.bytes.data()) + raw.payload_offset;
  const auto& entries = raw.header.at("tensors");
  std::size_t idx = 0;
  for_each_tensor(model, [&](const std::string& name, const char* kind, Tensor<T>& t) {
    if (idx >= entries.size()) throw CheckpointError(path + ": missing tensor " + name + "." + kind);
    const auto& e = entries[idx++];
    if (e.at("name").get<std::string>() != name || e.at("kind").get<std::string>() != kind) {
      throw CheckpointError(path + ": expected tensor " + name + "." + kind + ", found " +
                            e.at("name").get<std::string>() + "." + e.at("kind").get<std::string>());
    }
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw CheckpointError(path + ": " + name + "." + kind + " has shape " + shape_str(shape) + ", architecture " +
                            arch.name + " needs " + shape_str(t.shape()));
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (offset + 4 * t.numel() > payload_size) throw CheckpointError(path + ": truncated payload");
    get_f32(payload + offset, t);
  });
  if (idx != entries.size()) throw CheckpointError(path + ": unexpected extra tensors");

  for (auto& s : model.slots()) {
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i] != T(0) && s.mask[i] != T(1)) throw CheckpointError(path + ": non-binary mask in " + s.name);
    }
    if (!s.prunable && s.live_count() != s.mask.numel()) {
      throw CheckpointError(path + ": masked entries in non-prunable slot " + s.name);
    }
    s.dup = s.masked();
    s.momentum = Tensor<T>(s.theta.shape(), T(0));
  }
  return model;
}

std::string inspect_checkpoint(const std::string& path) {
  const RawCheckpoint raw = read_raw(path);
  std::ostringstream os;
  os << "file: " << path << "\n";
  os << "arch: " << raw.header.at("arch").dump() << "\n";
  const std::size_t payload_size = raw.bytes.size() - raw.payload_offset;
  const auto* payload = reinterpret_cast<const unsigned char*>(raw.bytes.data()) + raw.payload_offset;
  std::size_t total = 0, live = 0;
  for (const auto& e : raw.header.at("tensors")) {
    const Shape shape = e.at("shape").get<Shape>();
    const std::string kind = e.at("kind").get<std::string>();
    os << "  " << e.at("name").get<std::string>() << "." << kind << " " << shape_str(shape);
    if (kind == "mask") {
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset + 4 * n > payload_size) throw CheckpointError(path + ": truncated payload");
      Tensor<float> m(shape, 0.0f);
      get_f32(payload + offset, m);
      std::size_t ones = 0;
      for (std::size_t i = 0; i < n; ++i) ones += m[i] != 0.0f;
      os << " live " << ones << "/" << n;
      total += n;
      live += ones;
    }
    os << "\n";
  }
  os << "live parameters: " << live << "/" << total << "\n";
  return os.str();
}

template <typename T>
std::uint64_t model_digest(const Model<T>& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for_each_tensor(model, [&](const std::string&, const char*, const Tensor<T>& t) {
    mix(t.data().data(), t.numel() * sizeof(T));
  });
  return h;
}

#define DNR_INSTANTIATE_CHECKPOINT(T)                                   \
  template void save_checkpoint<T>(const Model<T>&, const std::string&); \
  template Model<T> load_checkpoint<T>(const std::string&);             \
  template std::uint64_t model_digest<T>(const Model<T>&);

DNR_INSTANTIATE_CHECKPOINT(float)
DNR_INSTANTIATE_CHECKPOINT(double)

}  // namespace dnr
