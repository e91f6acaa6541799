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

// Multiplicative speckle model. Intensity images follow y = x * n with n
// unit-mean Gamma(L, 1/L); in the log domain the speckle becomes additive
// with variance trigamma(L).

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "sonospeck/rng.hpp"
#include "sonospeck/tensor.hpp"

namespace sonospeck {

inline constexpr double kDefaultLogEps = 1e-6;

/// psi'(L) = sum_{k>=0} 1/(L+k)^2. Throws ValidationError for L <= 0.
double trigamma(double looks);

/// Inverse of trigamma by bisection. sigma2 must lie in (0, trigamma(0.5)].
double looks_from_variance(double sigma2);

/// Equivalent number of looks and the log-domain variance it implies.
struct SpeckleSpec {
  double looks = 4.0;
  double sigma2_tgt = 0.0;

  static SpeckleSpec from_looks(double looks);
  static SpeckleSpec from_variance(double sigma2);
};

/// Overwrites out with i.i.d. Gamma(L, 1/L) draws.
void fill_speckle(std::span<float> out, double looks, Rng& rng);

/// Gamma(L, 1/L) field of the given shape from a seeded stream.
Tensor<float> sample_speckle(Shape shape, double looks, std::uint64_t seed);

/// z = ln(y + eps). Throws ValidationError on negative pixels.
Tensor<float> to_log(const Tensor<float>& y, double eps = kDefaultLogEps);

/// exp(z_hat). The eps added by to_log is not subtracted back.
Tensor<float> from_log(const Tensor<float>& z_hat);

enum class SceneKind { kConstant, kPiecewise, kBlobs };

SceneKind parse_scene_kind(const std::string& name);
std::string to_string(SceneKind kind);

struct SyntheticScene {
  Tensor<float> clean;  // reflectivity, within [0.1, 1]
  Tensor<float> noisy;  // clean * speckle
  double looks_used = 0.0;
};

/// Builds a size x size scene of the requested structure and speckles it.
/// Piecewise scenes hold exactly two levels whose ratio is `contrast`
/// (at most 10 so both levels fit in [0.1, 1]).
SyntheticScene make_scene(SceneKind kind, std::size_t size, double contrast,
                          double looks, std::uint64_t seed);

/// mean^2 / population variance; +infinity for a constant region.
double enl(std::span<const float> region);
double enl(std::span<const double> region);

/// Median ENL over non-overlapping block x block tiles of an intensity
/// image; a robust estimate of L when most tiles are homogeneous.
double estimate_looks(const Tensor<float>& noisy, std::size_t block);

}  // namespace sonospeck
