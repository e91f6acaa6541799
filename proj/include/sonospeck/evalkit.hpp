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
#include <span>
#include <string>

#include "sonospeck/ops.hpp"
#include "sonospeck/rpn.hpp"

namespace sonospeck {

struct MScoreConfig {
  double nominal_looks = 4.0;
  std::size_t block_size = 25;
  double tol_enl = 0.2;
  double tol_mu = 0.1;
  double eps = 1e-6;

  void validate() const;
};

/// Ratio-image statistics over homogeneous blocks. m_value is +infinity when
/// no block passes the selection.
struct MScoreReport {
  std::size_t block_size = 0;
  std::size_t n_blocks_total = 0;
  std::size_t n_blocks_selected = 0;
  double mean_enl_dev_pct = 0.0;
  double mean_mu_dev_pct = 0.0;
  double m_value = 0.0;
};

/// noisy / (denoised + eps), elementwise.
Tensor<float> ratio_image(const Tensor<float>& noisy, const Tensor<float>& denoised, double eps);

/// First-order M-score. The ratio image is tiled into non-overlapping
/// block_size^2 blocks; a block is kept when its ENL is within tol_enl
/// (relative) of the nominal looks and its mean within tol_mu of 1. Over the
/// kept blocks, M = (mean 100|ENL - L|/L + mean 100|mu - 1|) / 2.
MScoreReport mscore(const Tensor<float>& noisy, const Tensor<float>& denoised,
                    const MScoreConfig& cfg);

/// Same statistic with blocks pooled across several image pairs.
MScoreReport mscore_pooled(std::span<const Tensor<float>> noisy,
                           std::span<const Tensor<float>> denoised, const MScoreConfig& cfg);

/// Sum |directional difference| of denoised over the same sum for noisy.
/// Throws NumericalError when noisy is flat along the axis.
double epi(const Tensor<float>& noisy, const Tensor<float>& denoised, Axis axis);

struct EpiReport {
  double epi_hd = 0.0;
  double epi_vd = 0.0;
};
EpiReport epi_report(const Tensor<float>& noisy, const Tensor<float>& denoised);

/// 10 log10(peak^2 / MSE); +infinity for identical images.
double psnr(const Tensor<float>& reference, const Tensor<float>& estimate, double peak = 1.0);

struct BenchReport {
  std::size_t height = 0;
  std::size_t width = 0;
  int iterations = 0;
  double seconds_per_image = 0.0;
  double images_per_sec = 0.0;
  std::uint64_t macs = 0;
  std::string hardware;
};

/// Times single-image inference after `warmup` untimed passes.
BenchReport bench_throughput(const RpnParams<float>& params, std::size_t h, std::size_t w,
                             int iterations, int warmup = 3);

/// CPU model string from /proc/cpuinfo plus the thread count.
std::string hardware_description();

}  // namespace sonospeck
