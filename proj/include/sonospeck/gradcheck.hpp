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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sonospeck/autodiff.hpp"

namespace sonospeck {

struct GradCheckCase {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords_checked = 0;

  bool passed() const { return rel_error < tolerance; }
};

/// Builds a scalar loss from leaves captured by the closure.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients against central differences.
///
/// The error is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
/// per leaf over the probed coordinates; the worst leaf is reported. With
/// max_coords_per_leaf > 0 a seeded random subset of coordinates is probed.
GradCheckCase check_gradients(const std::string& name, const LossBuilder& build,
                              std::span<const Var<double>> leaves, double tolerance,
                              double step = 1e-5, std::size_t max_coords_per_leaf = 0,
                              std::uint64_t seed = 0);

struct GradCheckOptions {
  std::uint64_t seed = 1;
  int instances = 20;         // random instances per op
  int network_instances = 2;  // full-network instances
  bool include_network = true;
  double op_tolerance = 1e-4;
  double network_tolerance = 1e-3;
  double step = 1e-5;
};

/// Every differentiable op, each loss term and the full network.
std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckOptions& options);

}  // namespace sonospeck
