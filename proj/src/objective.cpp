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

#include "sonospeck/objective.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sonospeck {

StatScope parse_stat_scope(const std::string& name) {
  if (name == "patch") return StatScope::kPerPatch;
  if (name == "batch") return StatScope::kPerBatch;
  throw ValidationError("stat_scope: expected 'patch' or 'batch', got '" + name + "'");
}

std::string to_string(StatScope scope) {
  return scope == StatScope::kPerPatch ? "patch" : "batch";
}

void LossConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ValidationError(key + ": " + why);
  };
  if (!(beta0 >= 0.0)) fail("beta0", "must be >= 0");
  if (curriculum_epochs < 1) fail("curriculum_epochs", "must be >= 1");
  if (!(gamma >= 0.0)) fail("gamma", "must be >= 0");
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  if (!(sigma_edge > 0.0)) fail("sigma_edge", "must be > 0");
  if (median_window < 3 || median_window % 2 == 0) fail("median_window", "must be odd and >= 3");
  if (!(eps > 0.0)) fail("log_eps", "must be > 0");
}

double beta_schedule(double epoch, double beta0, int horizon) {
  if (epoch < 0.0) throw ValidationError("beta_schedule: negative epoch");
  if (horizon < 1) throw ValidationError("beta_schedule: horizon must be >= 1");
  return beta0 * std::max(0.0, 1.0 - epoch / static_cast<double>(horizon));
}

template <typename T>
Var<T> loss_stat(Tape<T>& tape, const Var<T>& r, double sigma2_tgt, StatScope scope) {
  if (r.value().empty()) throw ValidationError("loss_stat: empty residual batch");
  const T target = static_cast<T>(sigma2_tgt);
  auto moments = [&](const Var<T>& x) {
    Var<T> m = ops::abs_map(tape, ops::reduce_mean(tape, x));
    Var<T> v = ops::abs_map(tape, ops::add_scalar(tape, ops::reduce_var(tape, x), -target));
    return ops::add(tape, m, v);
  };
  if (scope == StatScope::kPerBatch) return moments(r);
  const std::size_t n = r.shape().n;
  Var<T> acc = moments(ops::select_batch(tape, r, 0));
  for (std::size_t i = 1; i < n; ++i) {
    acc = ops::add(tape, acc, moments(ops::select_batch(tape, r, i)));
  }
  return ops::scale(tape, acc, T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> loss_str(Tape<T>& tape, const Var<T>& r, const Var<T>& x_hat, double sigma_edge) {
  if (r.shape() != x_hat.shape()) {
    throw ValidationError("loss_str: shape mismatch " + r.shape().str() + " vs " +
                          x_hat.shape().str());
  }
  if (!(sigma_edge > 0.0)) throw ValidationError("loss_str: sigma_edge must be > 0");
  const Shape s = r.shape();
  const std::size_t h = s.h, w = s.w;

  Var<T> gx = ops::pad_end(tape, ops::forward_diff(tape, x_hat, Axis::kHorizontal), h, w);
  Var<T> gy = ops::pad_end(tape, ops::forward_diff(tape, x_hat, Axis::kVertical), h, w);
  Var<T> weight = ops::exp_map(
      tape, ops::scale(tape, ops::hypot_map(tape, gx, gy), static_cast<T>(-1.0 / sigma_edge)));

  Var<T> dr_h = ops::abs_map(tape, ops::forward_diff(tape, r, Axis::kHorizontal));
  Var<T> dr_v = ops::abs_map(tape, ops::forward_diff(tape, r, Axis::kVertical));
  Var<T> term_h = ops::reduce_sum(tape, ops::mul(tape, ops::crop(tape, weight, 0, 0, h, w - 1), dr_h));
  Var<T> term_v = ops::reduce_sum(tape, ops::mul(tape, ops::crop(tape, weight, 0, 0, h - 1, w), dr_v));
  const double terms = static_cast<double>(s.n * s.c * (h * (w - 1) + (h - 1) * w));
  return ops::scale(tape, ops::add(tape, term_h, term_v), static_cast<T>(1.0 / terms));
}

template <typename T>
Tensor<T> median_filter(const Tensor<T>& y, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ValidationError("median_filter: window must be odd, got " + std::to_string(window));
  }
  const Shape s = y.shape();
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  if (static_cast<std::size_t>(window) > s.h || static_cast<std::size_t>(window) > s.w) {
    throw ValidationError("median_filter: window " + std::to_string(window) +
                          " larger than image " + s.str());
  }
  Tensor<T> out(s);
  std::vector<T> buf(static_cast<std::size_t>(window * window));
  const auto ih = static_cast<std::ptrdiff_t>(s.h);
  const auto iw = static_cast<std::ptrdiff_t>(s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = y.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::ptrdiff_t yy = 0; yy < ih; ++yy) {
        for (std::ptrdiff_t xx = 0; xx < iw; ++xx) {
          std::size_t k = 0;
          for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
            const auto row = static_cast<std::size_t>(reflect_index(yy + dy, ih)) * s.w;
            for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
              buf[k++] = src[row + static_cast<std::size_t>(reflect_index(xx + dx, iw))];
            }
          }
          auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
          std::nth_element(buf.begin(), mid, buf.end());
          dst[static_cast<std::size_t>(yy * iw + xx)] = *mid;
        }
      }
    }
  }
  return out;
}

template <typename T>
Var<T> loss_med(Tape<T>& tape, const Var<T>& z_hat, const Tensor<T>& y, int window,
                double eps) {
  if (z_hat.shape() != y.shape()) {
    throw ValidationError("loss_med: shape mismatch " + z_hat.shape().str() + " vs " +
                          y.shape().str());
  }
  Tensor<T> target = median_filter(y, window);
  for (auto& v : target.data()) {
    const double arg = static_cast<double>(v) + eps;
    if (!(arg > 0.0)) throw NumericalError("loss_med: log of non-positive median");
    v = static_cast<T>(std::log(arg));
  }
  Var<T> diff = ops::sub(tape, z_hat, Var<T>::constant(std::move(target)));
  return ops::reduce_mean(tape, ops::abs_map(tape, diff));
}

template <typename T>
LossTerms<T> loss_total(Tape<T>& tape, const DespeckleProducts<T>& products,
                        const Tensor<T>& y, const LossConfig& config, double sigma2_tgt,
                        double epoch) {
  const double beta = beta_schedule(epoch, config.beta0, config.curriculum_epochs);
  Var<T> med = loss_med(tape, products.z_hat, y, config.median_window, config.eps);
  Var<T> stat = loss_stat(tape, products.r, sigma2_tgt, config.stat_scope);
  Var<T> str = loss_str(tape, products.r, products.x_hat, config.sigma_edge);

  Var<T> total = ops::add(tape, ops::scale(tape, med, static_cast<T>(beta)),
                          ops::scale(tape, stat, static_cast<T>(config.gamma)));
  total = ops::add(tape, total, ops::scale(tape, str, static_cast<T>(config.lambda)));

  LossTerms<T> out;
  out.breakdown.l_med = static_cast<double>(med.value().item());
  out.breakdown.l_stat = static_cast<double>(stat.value().item());
  out.breakdown.l_str = static_cast<double>(str.value().item());
  out.breakdown.beta_t = beta;
  out.breakdown.total = static_cast<double>(total.value().item());
  out.total = std::move(total);
  return out;
}

#define SONOSPECK_INSTANTIATE_OBJECTIVE(T)                                             \
  template Var<T> loss_stat(Tape<T>&, const Var<T>&, double, StatScope);               \
  template Var<T> loss_str(Tape<T>&, const Var<T>&, const Var<T>&, double);            \
  template Var<T> loss_med(Tape<T>&, const Var<T>&, const Tensor<T>&, int, double);    \
  template Tensor<T> median_filter(const Tensor<T>&, int);                             \
  template LossTerms<T> loss_total(Tape<T>&, const DespeckleProducts<T>&,              \
                                   const Tensor<T>&, const LossConfig&, double, double);

SONOSPECK_INSTANTIATE_OBJECTIVE(float)
SONOSPECK_INSTANTIATE_OBJECTIVE(double)

#undef SONOSPECK_INSTANTIATE_OBJECTIVE

}  // namespace sonospeck
