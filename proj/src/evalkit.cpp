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

#include "sonospeck/evalkit.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>
#include <vector>

#include "sonospeck/speckle.hpp"

namespace sonospeck {
namespace {

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
  }
}

struct BlockTally {
  std::size_t total = 0;
  std::size_t selected = 0;
  double enl_dev_sum = 0.0;
  double mu_dev_sum = 0.0;
};

void tally_blocks(const Tensor<float>& rho, const MScoreConfig& cfg, BlockTally& tally) {
  const Shape s = rho.shape();
  const std::size_t b = cfg.block_size;
  std::vector<float> tile(b * b);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t by = 0; by + b <= s.h; by += b) {
        for (std::size_t bx = 0; bx + b <= s.w; bx += b) {
          for (std::size_t y = 0; y < b; ++y)
            for (std::size_t x = 0; x < b; ++x) tile[y * b + x] = rho.at(n, c, by + y, bx + x);
          ++tally.total;
          double sum = 0.0;
          for (float v : tile) sum += v;
          const double mu = sum / static_cast<double>(tile.size());
          const double looks = enl(tile);
          if (!std::isfinite(looks)) continue;
          if (std::abs(looks / cfg.nominal_looks - 1.0) > cfg.tol_enl) continue;
          if (std::abs(mu - 1.0) > cfg.tol_mu) continue;
          ++tally.selected;
          tally.enl_dev_sum += 100.0 * std::abs(looks - cfg.nominal_looks) / cfg.nominal_looks;
          tally.mu_dev_sum += 100.0 * std::abs(mu - 1.0);
        }
      }
    }
  }
}

MScoreReport finish(const BlockTally& t, const MScoreConfig& cfg) {
  MScoreReport r;
  r.block_size = cfg.block_size;
  r.n_blocks_total = t.total;
  r.n_blocks_selected = t.selected;
  if (t.selected == 0) {
    r.mean_enl_dev_pct = std::numeric_limits<double>::infinity();
    r.mean_mu_dev_pct = std::numeric_limits<double>::infinity();
    r.m_value = std::numeric_limits<double>::infinity();
    return r;
  }
  const auto k = static_cast<double>(t.selected);
  r.mean_enl_dev_pct = t.enl_dev_sum / k;
  r.mean_mu_dev_pct = t.mu_dev_sum / k;
  r.m_value = 0.5 * (r.mean_enl_dev_pct + r.mean_mu_dev_pct);
  return r;
}

double abs_diff_sum(const Tensor<float>& t, Axis axis) {
  const Shape s = t.shape();
  const bool horiz = axis == Axis::kHorizontal;
  double sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y + (horiz ? 0 : 1) < s.h; ++y)
        for (std::size_t x = 0; x + (horiz ? 1 : 0) < s.w; ++x) {
          const double a = t.at(n, c, y, x);
          const double b = horiz ? t.at(n, c, y, x + 1) : t.at(n, c, y + 1, x);
          sum += std::abs(b - a);
        }
  return sum;
}

}  // namespace

void MScoreConfig::validate() const {
  if (!(nominal_looks > 0.0)) throw ValidationError("nominal_looks: must be > 0");
  if (block_size < 2) throw ValidationError("block_size: must be >= 2");
  if (!(tol_enl > 0.0)) throw ValidationError("tol_enl: must be > 0");
  if (!(tol_mu > 0.0)) throw ValidationError("tol_mu: must be > 0");
  if (!(eps >= 0.0)) throw ValidationError("log_eps: must be >= 0");
}

Tensor<float> ratio_image(const Tensor<float>& noisy, const Tensor<float>& denoised, double eps) {
  require_same(noisy, denoised, "ratio_image");
  Tensor<float> rho(noisy.shape());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double d = static_cast<double>(denoised[i]) + eps;
    if (!(d > 0.0)) {
      throw ValidationError("ratio_image: denoised pixel not positive after eps flooring at " +
                            std::to_string(i));
    }
    rho[i] = static_cast<float>(static_cast<double>(noisy[i]) / d);
  }
  return rho;
}

MScoreReport mscore(const Tensor<float>& noisy, const Tensor<float>& denoised,
                    const MScoreConfig& cfg) {
  return mscore_pooled(std::span<const Tensor<float>>(&noisy, 1),
                       std::span<const Tensor<float>>(&denoised, 1), cfg);
}

MScoreReport mscore_pooled(std::span<const Tensor<float>> noisy,
                           std::span<const Tensor<float>> denoised, const MScoreConfig& cfg) {
  cfg.validate();
  if (noisy.size() != denoised.size()) {
    throw ValidationError("mscore: " + std::to_string(noisy.size()) + " noisy vs " +
                          std::to_string(denoised.size()) + " denoised images");
  }
  BlockTally tally;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    tally_blocks(ratio_image(noisy[i], denoised[i], cfg.eps), cfg, tally);
  }
  return finish(tally, cfg);
}

double epi(const Tensor<float>& noisy, const Tensor<float>& denoised, Axis axis) {
  require_same(noisy, denoised, "epi");
  const double den = abs_diff_sum(noisy, axis);
  if (den == 0.0) {
    throw NumericalError("epi: noisy image has no variation along the axis");
  }
  return abs_diff_sum(denoised, axis) / den;
}

EpiReport epi_report(const Tensor<float>& noisy, const Tensor<float>& denoised) {
  return EpiReport{epi(noisy, denoised, Axis::kHorizontal), epi(noisy, denoised, Axis::kVertical)};
}

double psnr(const Tensor<float>& reference, const Tensor<float>& estimate, double peak) {
  require_same(reference, estimate, "psnr");
  if (!(peak > 0.0)) throw ValidationError("psnr: peak must be > 0");
  if (reference.empty()) throw ValidationError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = static_cast<double>(reference[i]) - static_cast<double>(estimate[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

std::string hardware_description() {
  std::string model = "unknown CPU";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) model = line.substr(pos + 2);
      break;
    }
  }
  return model + " (" + std::to_string(std::thread::hardware_concurrency()) + " threads)";
}

BenchReport bench_throughput(const RpnParams<float>& params, std::size_t h, std::size_t w,
                             int iterations, int warmup) {
  if (iterations < 1) throw ValidationError("bench: iterations must be >= 1");
  if (warmup < 3) throw ValidationError("bench: at least 3 warmup iterations are required");
  Tensor<float> y = sample_speckle(Shape{1, 1, h, w}, 4.0, 1234);
  for (int i = 0; i < warmup; ++i) (void)despeckle_image(params, y, kDefaultLogEps);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iterations; ++i) (void)despeckle_image(params, y, kDefaultLogEps);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  BenchReport r;
  r.height = h;
  r.width = w;
  r.iterations = iterations;
  r.seconds_per_image = elapsed.count() / iterations;
  r.images_per_sec = iterations / elapsed.count();
  r.macs = rpn_macs(h, w);
  r.hardware = hardware_description();
  return r;
}

}  // namespace sonospeck
