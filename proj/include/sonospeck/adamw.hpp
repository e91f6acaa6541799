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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sonospeck/autodiff.hpp"

namespace sonospeck {

struct AdamWConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamWState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

/// One AdamW update of `params` from their accumulated gradients.
///
/// Decay is decoupled: p <- p * (1 - lr * wd) precedes the bias-corrected
/// adaptive step. Parameters without a gradient are treated as having a zero
/// gradient. If any gradient is non-finite nothing is modified and
/// NumericalError names the parameter.
template <typename T>
void adamw_step(std::span<Var<T>> params, AdamWState<T>& state, const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw ValidationError("adamw_step: optimizer state holds " + std::to_string(state.m.size()) +
                          " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].shape()) {
      throw ValidationError("adamw_step: moment shape mismatch for parameter " +
                            std::to_string(i));
    }
    if (params[i].has_grad() && !params[i].grad().all_finite()) {
      throw NumericalError("adamw_step: non-finite gradient in parameter '" +
                           params[i].label() + "'");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.lr);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  const T eps = static_cast<T>(cfg.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].mutable_value().raw();
    T* m = state.m[i].raw();
    T* v = state.v[i].raw();
    const T* g = params[i].has_grad() ? params[i].grad().raw() : nullptr;
    const std::size_t len = state.m[i].size();
    for (std::size_t j = 0; j < len; ++j) {
      const T gj = g ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] = p[j] * decay - lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace sonospeck
