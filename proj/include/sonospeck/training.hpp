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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sonospeck/adamw.hpp"
#include "sonospeck/checkpoint.hpp"
#include "sonospeck/evalkit.hpp"
#include "sonospeck/objective.hpp"
#include "sonospeck/rng.hpp"
#include "sonospeck/speckle.hpp"

namespace sonospeck {

struct TrainConfig {
  std::size_t patch_size = 64;
  std::size_t batch_size = 8;
  int epochs = 50;
  AdamWConfig optim;
  double augment_prob = 0.5;
  std::vector<int> augment_looks{1, 2, 3, 4};
  std::uint64_t seed = 0;
  int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
  bool deterministic = true;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Where each patch of a batch came from.
struct PatchOrigin {
  std::size_t image = 0;
  std::size_t top = 0;
  std::size_t left = 0;
};

/// n patches, each from a uniformly chosen image at a uniformly chosen
/// top-left corner.
Tensor<float> sample_patches(std::span<const Tensor<float>> corpus, std::size_t n,
                             std::size_t patch_size, Rng& rng,
                             std::vector<PatchOrigin>* origins = nullptr);

/// Multiplies each sample, with probability `prob`, by a fresh Gamma(L, 1/L)
/// field with L uniform over `looks`. Sample i draws from its own stream
/// keyed by (seed, step, i), so the result does not depend on batch order
/// elsewhere. applied_looks (if given) receives L per sample, 0 if untouched.
Tensor<float> augment_speckle(const Tensor<float>& batch, double prob,
                              std::span<const int> looks, std::uint64_t seed,
                              std::uint64_t step, std::vector<int>* applied_looks = nullptr);

/// One row of the metrics log. Loss terms and var_r are step averages over
/// the epoch; val_mscore is NaN without a validation set.
struct EpochMetrics {
  int epoch = 0;
  double beta = 0.0;
  double l_med = 0.0;
  double l_stat = 0.0;
  double l_str = 0.0;
  double total = 0.0;
  double var_r = 0.0;
  double val_mscore = 0.0;
};

inline constexpr char kMetricsHeader[] = "epoch,beta,l_med,l_stat,l_str,total,var_r,val_mscore";
std::string metrics_row(const EpochMetrics& m);

struct TrainOptions {
  /// Noisy validation images scored with the M-score after every epoch.
  std::vector<Tensor<float>> validation;
  MScoreConfig mscore;
  /// Receives metrics.csv, periodic and final checkpoints. Empty: no files.
  std::filesystem::path output_dir;
  std::uint64_t init_seed = 0;
  /// Start from these parameters instead of build_rpn(init_seed).
  std::optional<RpnParams<float>> initial;
  /// Called after every epoch with the 1-based count of finished epochs.
  std::function<void(int, const RpnParams<float>&)> on_epoch_end;
  /// Echo metric rows here as they are produced.
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  RpnParams<float> params;
  AdamWState<float> optimizer;
  std::vector<EpochMetrics> history;
  Checkpoint checkpoint;
};

/// Self-supervised training. Every epoch runs ceil(|corpus| / batch) steps;
/// each step samples fresh patches, optionally augments them, and applies
/// one AdamW update of the curriculum-weighted objective. A non-finite loss
/// aborts with NumericalError; when output_dir is set the parameters of the
/// last finished epoch are first written to last_good.ckpt.
TrainResult train(std::span<const Tensor<float>> corpus, const TrainConfig& cfg,
                  const LossConfig& loss, const SpeckleSpec& speckle,
                  const TrainOptions& options = {});

/// Mean over patches of the population variance of r = z - ln(x_hat + eps),
/// evaluated on `count` fresh un-augmented patches.
double residual_variance(const RpnParams<float>& params, std::span<const Tensor<float>> corpus,
                         std::size_t count, std::size_t patch_size, std::uint64_t seed,
                         double eps = kDefaultLogEps);

/// Despeckles every image; parallel across images unless workers == 1.
std::vector<Tensor<float>> despeckle_all(const RpnParams<float>& params,
                                         std::span<const Tensor<float>> images, double eps,
                                         std::size_t workers);

/// Deterministic split of corpus indices into (train, held-out).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_corpus(std::size_t size,
                                                                           double val_fraction,
                                                                           std::uint64_t seed);

struct SweepOptions {
  double val_fraction = 0.1;
  int sweep_epochs = 10;
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
  /// Looks used by the M-score; estimated from the held-out images if unset.
  std::optional<double> nominal_looks;
  MScoreConfig mscore;
  std::function<void(const std::string&)> log;
};

struct SweepRow {
  double value = 0.0;  // candidate looks or lambda
  double sigma2_tgt = 0.0;
  double m_value = 0.0;
  std::size_t n_selected = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t best = 0;  // index into rows, smallest M (first on ties)
  double nominal_looks = 0.0;
};

/// Short training run per integer L in [looks_min, looks_max] with
/// sigma2_tgt = trigamma(L); pooled M-score of the held-out split for each.
SweepResult select_target_variance(std::span<const Tensor<float>> corpus, int looks_min,
                                   int looks_max, const TrainConfig& cfg,
                                   const LossConfig& loss, const SweepOptions& options);

/// Same protocol across structural weights at a fixed target variance.
SweepResult sweep_lambda(std::span<const Tensor<float>> corpus, std::span<const double> lambdas,
                         const TrainConfig& cfg, const LossConfig& loss,
                         const SpeckleSpec& speckle, const SweepOptions& options);

std::string variance_sweep_csv(const SweepResult& result);
std::string lambda_sweep_csv(const SweepResult& result);

/// Keeps large tensors on the heap between steps instead of returning them
/// to the OS after every op; no effect outside glibc.
void tune_allocator();

}  // namespace sonospeck
