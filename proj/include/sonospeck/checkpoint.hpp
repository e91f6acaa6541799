// Copyright (c) 2026 The Sonospeck Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoint file layout (all integers little-endian):
//
//   8 bytes   magic "RPNCKPT1" (the trailing digit is the format version)
//   u32       record count
//   records   u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//             prod(dims) 32-bit words
//
// Parameter records carry IEEE-754 binary32 values under their canonical
// names ("stem.weight", "blocks.0.dw.weight", ...). Metadata records live
// under "meta." and optimizer moments under "optim."; records whose name
// ends in ".u32" hold raw unsigned words and ".f64" records hold binary64
// values split into (low, high) word pairs, so every field round-trips
// bit-exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sonospeck/adamw.hpp"
#include "sonospeck/objective.hpp"
#include "sonospeck/rpn.hpp"
#include "sonospeck/speckle.hpp"

namespace sonospeck {

inline constexpr char kCheckpointMagic[9] = "RPNCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::vector<CheckpointTensor> params;
  std::optional<AdamWState<float>> optimizer;
  std::uint32_t epoch = 0;
  LossConfig loss;
  SpeckleSpec speckle = SpeckleSpec::from_looks(4.0);
};

Checkpoint make_checkpoint(const RpnParams<float>& params);

/// Rebuilds parameters; throws ValidationError when a record is missing or
/// its dims disagree with the declared architecture.
RpnParams<float> params_from_checkpoint(const Checkpoint& ckpt);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError for unreadable, truncated or foreign files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of the encoded checkpoint.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

}  // namespace sonospeck
