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

// Residual prediction network: an isotropic ConvNeXt-style stack operating
// on log-intensity images.
//
//   stem   3x3 conv 1 -> 96
//   block  x2: f + gamma * P(GELU(P(LN(D7x7(f)))))   96 -> 384 -> 96
//   head   3x3 conv 96 -> 1
//
// The head is zero-initialised, so a freshly built network predicts a zero
// residual and the despeckler starts as the identity.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sonospeck/autodiff.hpp"
#include "sonospeck/ops.hpp"

namespace sonospeck {

inline constexpr std::size_t kRpnWidth = 96;
inline constexpr std::size_t kRpnExpansion = 4;
inline constexpr std::size_t kRpnHidden = kRpnWidth * kRpnExpansion;
inline constexpr std::size_t kRpnBlocks = 2;
inline constexpr std::size_t kRpnStemKernel = 3;
inline constexpr std::size_t kRpnDepthwiseKernel = 7;
inline constexpr std::size_t kRpnParameterCount = 160417;
inline constexpr double kRpnLayerNormEps = 1e-6;
inline constexpr double kRpnLayerScaleInit = 1e-2;

template <typename T>
struct ConvNextBlock {
  Var<T> dw_weight, dw_bias;
  Var<T> norm_scale, norm_shift;
  Var<T> expand_weight, expand_bias;
  Var<T> project_weight, project_bias;
  Var<T> layer_scale;
};

/// A parameter with its checkpoint name and declared (unpadded) dims.
template <typename T>
struct NamedParam {
  std::string name;
  std::vector<std::uint32_t> dims;
  Var<T> var;
};

template <typename T>
struct RpnParams {
  Var<T> stem_weight, stem_bias;
  std::array<ConvNextBlock<T>, kRpnBlocks> blocks;
  Var<T> head_weight, head_bias;

  /// Parameters in canonical (checkpoint) order.
  std::vector<NamedParam<T>> named() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Deep copy with fresh leaves in another precision.
  template <typename U>
  RpnParams<U> cast() const;
  RpnParams clone() const { return cast<T>(); }
};

/// Declared architecture: canonical names and dims of every parameter.
std::vector<std::pair<std::string, std::vector<std::uint32_t>>> rpn_layout();

/// Fan-in scaled truncated-normal init for stem, depthwise and pointwise
/// weights; zero biases; unit/zero norm affine; layer scale 1e-2; zero head.
template <typename T>
RpnParams<T> build_rpn(std::uint64_t seed);

/// Residual estimate f(z) for z of shape (n, 1, h, w), h and w >= 7.
template <typename T>
Var<T> rpn_forward(Tape<T>& tape, const RpnParams<T>& params, const Var<T>& z);

/// Multiply-accumulates of one forward pass per output pixel: 158,592.
std::uint64_t rpn_macs_per_pixel();
std::uint64_t rpn_macs(std::size_t h, std::size_t w);

/// Graph products of one despeckling pass.
template <typename T>
struct DespeckleProducts {
  Var<T> z;          // ln(y + eps), constant
  Var<T> residual;   // f(z)
  Var<T> z_hat;      // z - f(z)
  Var<T> x_hat;      // exp(z_hat)
  Var<T> r;          // z - ln(x_hat + eps)
};

template <typename T>
DespeckleProducts<T> despeckle(Tape<T>& tape, const RpnParams<T>& params,
                               const Tensor<T>& y, T eps);

/// Inference-only despeckling of intensity images y (n, 1, h, w).
struct DespeckleResult {
  Tensor<float> x_hat;
  Tensor<float> r;
};
DespeckleResult despeckle_image(const RpnParams<float>& params,
                                const Tensor<float>& y, double eps);

}  // namespace sonospeck
