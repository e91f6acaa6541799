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

// Self-supervised objective:
//
//   total = beta(t) * L_med + gamma * L_stat + lambda * L_str
//
// L_stat pins the mean and variance of the log-ratio residual r to
// (0, sigma2_tgt); L_str penalises residual gradients except across edges of
// the estimate; L_med is the annealed median-filter prior.

#pragma once

#include <string>

#include "sonospeck/rpn.hpp"

namespace sonospeck {

/// Where the moments of L_stat are taken.
enum class StatScope { kPerPatch, kPerBatch };

StatScope parse_stat_scope(const std::string& name);
std::string to_string(StatScope scope);

struct LossConfig {
  double beta0 = 1.0;
  int curriculum_epochs = 30;  // T
  double gamma = 1.0;
  double lambda = 0.05;
  double sigma_edge = 0.1;
  int median_window = 3;
  double eps = 1e-6;
  StatScope stat_scope = StatScope::kPerPatch;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct LossBreakdown {
  double l_med = 0.0;
  double l_stat = 0.0;
  double l_str = 0.0;
  double beta_t = 0.0;
  double total = 0.0;
};

/// beta0 * max(0, 1 - t / T).
double beta_schedule(double epoch, double beta0, int horizon);

/// |mean(r)| + |var(r) - sigma2_tgt| per patch (or over the whole batch),
/// averaged over patches.
template <typename T>
Var<T> loss_stat(Tape<T>& tape, const Var<T>& r, double sigma2_tgt,
                 StatScope scope = StatScope::kPerPatch);

/// Edge-weighted residual smoothness. Gradients are forward differences;
/// the magnitude of grad x_hat uses a zero difference past the last
/// row/column, so every horizontal and vertical residual difference gets a
/// weight. The sum is divided by the number of difference terms.
template <typename T>
Var<T> loss_str(Tape<T>& tape, const Var<T>& r, const Var<T>& x_hat,
                double sigma_edge);

/// Mean |z_hat - ln(Med(y) + eps)| with a detached median target.
template <typename T>
Var<T> loss_med(Tape<T>& tape, const Var<T>& z_hat, const Tensor<T>& y,
                int window, double eps);

/// Spatial median over a window x window neighbourhood, reflect borders.
template <typename T>
Tensor<T> median_filter(const Tensor<T>& y, int window);

template <typename T>
struct LossTerms {
  Var<T> total;  // autodiff root
  LossBreakdown breakdown;
};

template <typename T>
LossTerms<T> loss_total(Tape<T>& tape, const DespeckleProducts<T>& products,
                        const Tensor<T>& y, const LossConfig& config,
                        double sigma2_tgt, double epoch);

}  // namespace sonospeck
