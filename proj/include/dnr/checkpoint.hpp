// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files: magic, header length, JSON header, then little-endian
// float32 payload. docs/checkpoint.md has the byte layout.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "dnr/layers.hpp"

namespace dnr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'N', 'R', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path);

/// Rebuilds the architecture named in the header and fills every tensor by
/// name. Any missing, extra or mis-shaped tensor is an error.
template <typename T>
Model<T> load_checkpoint(const std::string& path);

/// Human-readable dump of the header plus per-slot density.
std::string inspect_checkpoint(const std::string& path);

/// FNV-1a over every theta, mask and running statistic, for cheap
/// "nothing changed" checks.
template <typename T>
std::uint64_t model_digest(const Model<T>& model);

}  // namespace dnr
