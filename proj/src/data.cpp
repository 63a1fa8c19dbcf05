// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

namespace dnr {

namespace fs = std::filesystem;

const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DataError(name + ": image tensor " + shape_str(images.shape()) + " does not match " +
                    std::to_string(labels.size()) + " labels");
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError(name + ": pixel outside [0, 1]");
  }
  for (int t : labels) {
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes) {
      throw DataError(name + ": label " + std::to_string(t) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> buf(1 << 16);
    int n;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.insert(out.end(), buf.begin(), buf.begin() + n);
    int err = Z_OK;
    const char* msg = gzerror(f, &err);
    gzclose(f);
    if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw DataError(path + ": corrupt gzip stream: " + msg);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string find_variant(const std::string& dir, const std::string& base) {
  for (const std::string& candidate : {base, base + ".gz"}) {
    const fs::path p = fs::path(dir) / candidate;
    if (fs::exists(p)) return p.string();
  }
  throw DataError("missing " + base + " (or .gz) in " + dir);
}

std::uint32_t be32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 | std::uint32_t(p[3]);
}

}  // namespace

Dataset load_cifar10(const std::string& dir, Split split) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<std::string> files;
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  Dataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.num_classes = 10;
  std::vector<float> pixels;
  for (const auto& f : files) {
    const std::string path = (fs::path(dir) / f).string();
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError(path + ": truncated file (" + std::to_string(bytes.size()) + " bytes is not a whole number of " +
                      std::to_string(kRecord) + "-byte records)");
    }
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw DataError(path + ": label byte " + std::to_string(rec[0]) + " out of range");
      ds.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kRecord; ++i) pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
  }
  ds.images = Tensor<float>({ds.labels.size(), 3, 32, 32}, std::move(pixels));
  return ds;
}

IdxArray read_idx(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4) throw DataError(path + ": truncated IDX header");
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08) {
    throw DataError(path + ": bad magic number (expected unsigned-byte IDX)");
  }
  const std::size_t rank = bytes[3];
  if (rank == 0 || bytes.size() < 4 + 4 * rank) throw DataError(path + ": truncated IDX header");
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    out.dims.push_back(be32(bytes.data() + 4 + 4 * i));
    count *= out.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() - offset < count) {
    throw DataError(path + ": truncated IDX payload (" + std::to_string(bytes.size() - offset) + " of " +
                    std::to_string(count) + " bytes)");
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return out;
}

Dataset load_mnist_idx(const std::string& dir, Split split) {
  const std::string prefix = split == Split::Train ? "train" : "t10k";
  const auto images = read_idx(find_variant(dir, prefix + "-images-idx3-ubyte"));
  const auto labels = read_idx(find_variant(dir, prefix + "-labels-idx1-ubyte"));
  if (images.dims.size() != 3 || labels.dims.size() != 1 || images.dims[0] != labels.dims[0]) {
    throw DataError(dir + ": MNIST image/label files disagree");
  }
  Dataset ds;
  ds.name = "mnist";
  ds.split = split;
  ds.num_classes = 10;
  std::vector<float> pixels(images.data.size());
  std::transform(images.data.begin(), images.data.end(), pixels.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  ds.images = Tensor<float>({images.dims[0], 1, images.dims[1], images.dims[2]}, std::move(pixels));
  for (std::uint8_t l : labels.data) {
    if (l > 9) throw DataError(dir + ": label " + std::to_string(l) + " out of range");
    ds.labels.push_back(l);
  }
  return ds;
}

Dataset synth_blobs(const BlobSpec& spec, std::uint64_t seed, Split split) {
  if (spec.classes < 2 || spec.samples == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw std::invalid_argument("synth_blobs: need >= 2 classes and non-empty samples");
  }
  const std::size_t dim = spec.channels * spec.height * spec.width;
  std::mt19937_64 mean_rng(seed);
  std::uniform_real_distribution<double> mean_dist(0.2, 0.8);
  std::vector<double> means(spec.classes * dim);
  for (auto& m : means) m = mean_dist(mean_rng);

  std::seed_seq sample_seed{seed, static_cast<std::uint64_t>(split == Split::Train ? 1 : 2)};
  std::mt19937_64 rng(sample_seed);
  std::normal_distribution<double> noise(0.0, spec.spread);
  Dataset ds;
  ds.name = "synth";
  ds.split = split;
  ds.num_classes = spec.classes;
  ds.images = Tensor<float>({spec.samples, spec.channels, spec.height, spec.width}, 0.0f);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t k = i % spec.classes;
    ds.labels.push_back(static_cast<int>(k));
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = means[k * dim + j] + noise(rng);
      ds.images[i * dim + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

Dataset take_first(const Dataset& ds, std::size_t n) {
  n = std::min(n, ds.size());
  Dataset out = ds;
  Shape shape = ds.images.shape();
  const std::size_t per = ds.images.numel() / std::max<std::size_t>(1, shape[0]);
  shape[0] = n;
  const auto& src = ds.images.storage();
  out.images = Tensor<float>(shape, std::vector<float>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n * per)));
  out.labels.resize(n);
  return out;
}

Tensor<float> hflip(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("hflip expects C x H x W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape(), 0.0f);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = image[(k * h + y) * w + (w - 1 - x)];
    }
  }
  return out;
}

Tensor<float> pad_crop(const Tensor<float>& image, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (image.rank() != 3) throw ShapeError("pad_crop expects C x H x W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (pad >= h || pad >= w) throw ShapeError("reflective padding must be smaller than the image");
  if (dy > 2 * pad || dx > 2 * pad) throw std::invalid_argument("crop offset outside the padded image");
  // Padded coordinate p maps back to the source by mirroring at the border
  // without repeating the edge pixel.
  auto reflect = [](std::ptrdiff_t p, std::ptrdiff_t n) {
    if (p < 0) p = -p;
    if (p >= n) p = 2 * (n - 1) - p;
    return static_cast<std::size_t>(p);
  };
  Tensor<float> out(image.shape(), 0.0f);
  const auto ip = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + dy) - ip, static_cast<std::ptrdiff_t>(h));
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + dx) - ip, static_cast<std::ptrdiff_t>(w));
        out[(k * h + y) * w + x] = image[(k * h + sy) * w + sx];
      }
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& batch, std::mt19937_64& rng, std::size_t pad) {
  if (batch.rank() != 4) throw ShapeError("augment expects N x C x H x W");
  const std::size_t n = batch.dim(0);
  const std::size_t per = batch.numel() / std::max<std::size_t>(1, n);
  const Shape image_shape{batch.dim(1), batch.dim(2), batch.dim(3)};
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  Tensor<float> out = batch;
  const auto& src = batch.storage();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> img(image_shape, std::vector<float>(src.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                      src.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    if (coin(rng)) img = hflip(img);
    if (pad > 0) {
      const std::size_t dy = offset(rng), dx = offset(rng);
      img = pad_crop(img, pad, dy, dx);
    }
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch, bool shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

template <typename T>
Batch<T> gather(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Shape shape = ds.images.shape();
  const std::size_t per = ds.images.numel() / std::max<std::size_t>(1, shape[0]);
  shape[0] = indices.size();
  Batch<T> b;
  b.x = Tensor<T>(shape, T(0));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j];
    if (i >= ds.size()) throw std::out_of_range("sample index out of range");
    for (std::size_t k = 0; k < per; ++k) b.x[j * per + k] = static_cast<T>(ds.images[i * per + k]);
    b.labels.push_back(ds.labels[i]);
  }
  return b;
}

template Batch<float> gather<float>(const Dataset&, const std::vector<std::size_t>&);
template Batch<double> gather<double>(const Dataset&, const std::vector<std::size_t>&);

}  // namespace dnr
