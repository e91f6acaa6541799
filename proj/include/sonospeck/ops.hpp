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

// Differentiable operators. Each op checks its shapes, computes the forward
// value, throws NumericalError if that value is not finite, and records its
// backward rule on the tape. Vectors (biases, per-channel scales) are
// tensors of shape (1, c, 1, 1); convolution kernels are (co, ci, k, k) and
// pointwise weights (co, ci, 1, 1).
//
// Instantiated for float (training, inference) and double (gradient checks).

#pragma once

#include <cstddef>

#include "sonospeck/autodiff.hpp"

namespace sonospeck {

enum class PaddingMode { kReflect, kZero };
enum class Axis { kHorizontal, kVertical };

/// Index of position i in [-pad, n + pad) mirrored into [0, n) without
/// repeating the edge sample (numpy "reflect"). Requires pad < n.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

namespace ops {

/// Stride-1 same-size cross-correlation with an odd square kernel.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
              const Var<T>& bias, PaddingMode mode = PaddingMode::kReflect);

/// Per-channel convolution; kernel is (c, 1, k, k) with odd k.
template <typename T>
Var<T> depthwise_conv(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
                      const Var<T>& bias,
                      PaddingMode mode = PaddingMode::kReflect);

/// depthwise_conv restricted to the 7x7 kernels of the ConvNeXt block.
template <typename T>
Var<T> depthwise_conv7(Tape<T>& tape, const Var<T>& input,
                       const Var<T>& kernel, const Var<T>& bias,
                       PaddingMode mode = PaddingMode::kReflect);

/// Per-pixel linear map across channels (1x1 convolution).
template <typename T>
Var<T> pointwise_conv(Tape<T>& tape, const Var<T>& input, const Var<T>& weight,
                      const Var<T>& bias);

/// Normalises the channel vector at every pixel (population variance),
/// then applies a per-channel affine map.
template <typename T>
Var<T> layer_norm_channels(Tape<T>& tape, const Var<T>& input,
                           const Var<T>& scale, const Var<T>& shift, T eps);

/// x * Phi(x) with the exact Gaussian CDF.
template <typename T>
Var<T> gelu(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
/// a * factor.
template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& a, T factor);
/// a + offset.
template <typename T>
Var<T> add_scalar(Tape<T>& tape, const Var<T>& a, T offset);
/// Multiplies channel c of every sample by v[c]; v is (1, c, 1, 1).
template <typename T>
Var<T> scale_by_channel_vector(Tape<T>& tape, const Var<T>& input,
                               const Var<T>& v);
template <typename T>
Var<T> exp_map(Tape<T>& tape, const Var<T>& input);
/// ln(input + eps); throws NumericalError unless input + eps > 0 everywhere.
template <typename T>
Var<T> log_map(Tape<T>& tape, const Var<T>& input, T eps);
/// |x| with subgradient 0 at 0.
template <typename T>
Var<T> abs_map(Tape<T>& tape, const Var<T>& input);
/// sqrt(a^2 + b^2) with subgradient 0 where both vanish.
template <typename T>
Var<T> hypot_map(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

/// x[.., j+1] - x[.., j] along the axis; one fewer sample on that axis.
template <typename T>
Var<T> forward_diff(Tape<T>& tape, const Var<T>& input, Axis axis);
/// Spatial window [top, top+h) x [left, left+w).
template <typename T>
Var<T> crop(Tape<T>& tape, const Var<T>& input, std::size_t top,
            std::size_t left, std::size_t h, std::size_t w);
/// Appends zero rows/columns at the bottom/right up to (h, w).
template <typename T>
Var<T> pad_end(Tape<T>& tape, const Var<T>& input, std::size_t h,
               std::size_t w);
/// Sample i of the batch as a (1, c, h, w) tensor.
template <typename T>
Var<T> select_batch(Tape<T>& tape, const Var<T>& input, std::size_t i);

template <typename T>
Var<T> reduce_sum(Tape<T>& tape, const Var<T>& input);
template <typename T>
Var<T> reduce_mean(Tape<T>& tape, const Var<T>& input);
/// Population variance (divides by the element count).
template <typename T>
Var<T> reduce_var(Tape<T>& tape, const Var<T>& input);

}  // namespace ops
}  // namespace sonospeck
