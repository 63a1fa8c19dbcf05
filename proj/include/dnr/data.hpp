// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets (CIFAR-10 binary, MNIST IDX, synthetic Gaussian blobs),
// augmentation and deterministic batching. Pixels are kept in [0, 1].

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnr/tensor.hpp"

namespace dnr {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };
const char* to_string(Split split);

struct Dataset {
  std::string name;
  Split split = Split::Train;
  Tensor<float> images;  // N x C x H x W
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  /// Throws DataError unless images lie in [0, 1] and labels in range.
  void validate() const;
};

/// data_batch_1..5.bin or test_batch.bin: 1 label byte + 3072 pixel bytes per record.
Dataset load_cifar10(const std::string& dir, Split split);

/// Big-endian IDX file with an unsigned-byte payload; ".gz" files are
/// decompressed transparently.
struct IdxArray {
  Shape dims;
  std::vector<std::uint8_t> data;
};
IdxArray read_idx(const std::string& path);

/// train-images-idx3-ubyte / train-labels-idx1-ubyte or the t10k-* pair,
/// optionally gzipped.
Dataset load_mnist_idx(const std::string& dir, Split split);

struct BlobSpec {
  std::size_t classes = 2;
  std::size_t samples = 100;
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  double spread = 0.15;  // per-pixel standard deviation
};

/// Class means are drawn from `seed`; the split only changes the samples.
Dataset synth_blobs(const BlobSpec& spec, std::uint64_t seed, Split split = Split::Train);

/// The first n samples (all when n >= size).
Dataset take_first(const Dataset& ds, std::size_t n);

Tensor<float> hflip(const Tensor<float>& image);
/// Reflect-pads every side by `pad` and crops the original size at (dy, dx).
Tensor<float> pad_crop(const Tensor<float>& image, std::size_t pad, std::size_t dy, std::size_t dx);
/// Per image: flip with probability 1/2, then pad-4 reflective random crop.
Tensor<float> augment(const Tensor<float>& batch, std::mt19937_64& rng, std::size_t pad = 4);

/// Index batches for one epoch; the permutation depends only on (seed, epoch).
/// The final partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch, bool shuffle = true);

template <typename T>
struct Batch {
  Tensor<T> x;
  std::vector<int> labels;
};

template <typename T>
Batch<T> gather(const Dataset& ds, const std::vector<std::size_t>& indices);

}  // namespace dnr
