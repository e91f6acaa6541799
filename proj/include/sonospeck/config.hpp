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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sonospeck/evalkit.hpp"
#include "sonospeck/objective.hpp"
#include "sonospeck/speckle.hpp"
#include "sonospeck/training.hpp"

namespace sonospeck {

/// Every tunable of every command. Keys are listed by config_keys().
struct RunConfig {
  TrainConfig train;
  LossConfig loss;
  SpeckleSpec speckle = SpeckleSpec::from_looks(4.0);
  MScoreConfig mscore;
  std::optional<double> nominal_looks;  // "auto" estimates from the data
  std::uint64_t init_seed = 0;

  // paths
  std::string corpus_dir;
  std::string output_dir;
  std::string checkpoint;
  std::string input_dir;
  std::string noisy_dir;
  std::string denoised_dir;
  std::string clean_dir;

  // simulate
  std::string scene = "piecewise";
  std::size_t count = 32;
  std::size_t size = 128;
  double contrast = 4.0;
  double looks = 4.0;
  double intensity_scale = 0.25;
  std::string image_format = "png";

  // sweeps
  int looks_min = 4;
  int looks_max = 20;
  double val_fraction = 0.1;
  int sweep_epochs = 10;
  std::vector<double> lambda_grid{0.0, 0.01, 0.05, 0.2, 1.0};

  // bench and gradcheck
  std::size_t bench_size = 160;
  int bench_iterations = 10;
  int gradcheck_instances = 20;

  /// Cross-field checks; throws ValidationError naming the key.
  void validate() const;
};

/// Keys accepted in config files and as --key value overrides.
std::vector<std::string> config_keys();

/// Sets one key from its textual value. Unknown keys and malformed values
/// raise ValidationError naming the key.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses "key = value" lines ('#' starts a comment), then applies the
/// overrides in order, so overrides win.
RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// parse_config_text on a file; an empty path means defaults only.
RunConfig parse_config(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// The full effective configuration as "key = value" lines in key order;
/// parse_config_text of the result reproduces the configuration.
std::string echo_config(const RunConfig& cfg);

/// Throws ValidationError("missing required path: <key>") when empty.
void require_path(const std::string& value, const std::string& key);

}  // namespace sonospeck
