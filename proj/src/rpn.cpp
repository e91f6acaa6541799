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

#include "sonospeck/rpn.hpp"

#include <cmath>

#include "sonospeck/rng.hpp"

namespace sonospeck {
namespace {

using Dims = std::vector<std::uint32_t>;

Shape vector_shape(std::size_t c) { return Shape{1, c, 1, 1}; }

// Declared dims padded to the rank-4 storage shape. Vectors live on the
// channel axis, matrices are (co, ci, 1, 1).
Shape storage_shape(const Dims& d) {
  switch (d.size()) {
    case 1:
      return vector_shape(d[0]);
    case 2:
      return Shape{d[0], d[1], 1, 1};
    default:
      return Shape{d[0], d[1], d[2], d[3]};
  }
}

template <typename T>
Var<T> truncated_normal_leaf(const Dims& dims, std::size_t fan_in, Rng& rng,
                             const std::string& label) {
  Tensor<T> t(storage_shape(dims));
  const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(std * rng.truncated_normal());
  return Var<T>::leaf(std::move(t), label);
}

template <typename T>
Var<T> filled_leaf(const Dims& dims, double value, const std::string& label) {
  return Var<T>::leaf(Tensor<T>(storage_shape(dims), static_cast<T>(value)), label);
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::uint32_t>>> rpn_layout() {
  const auto w = static_cast<std::uint32_t>(kRpnWidth);
  const auto hid = static_cast<std::uint32_t>(kRpnHidden);
  const auto ks = static_cast<std::uint32_t>(kRpnStemKernel);
  const auto kd = static_cast<std::uint32_t>(kRpnDepthwiseKernel);
  std::vector<std::pair<std::string, Dims>> layout;
  layout.push_back({"stem.weight", {w, 1, ks, ks}});
  layout.push_back({"stem.bias", {w}});
  for (std::size_t b = 0; b < kRpnBlocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    layout.push_back({p + "dw.weight", {w, 1, kd, kd}});
    layout.push_back({p + "dw.bias", {w}});
    layout.push_back({p + "norm.scale", {w}});
    layout.push_back({p + "norm.shift", {w}});
    layout.push_back({p + "expand.weight", {hid, w}});
    layout.push_back({p + "expand.bias", {hid}});
    layout.push_back({p + "project.weight", {w, hid}});
    layout.push_back({p + "project.bias", {w}});
    layout.push_back({p + "layer_scale", {w}});
  }
  layout.push_back({"head.weight", {1, w, ks, ks}});
  layout.push_back({"head.bias", {1}});
  return layout;
}

template <typename T>
std::vector<NamedParam<T>> RpnParams<T>::named() const {
  const auto layout = rpn_layout();
  std::vector<Var<T>> vars{stem_weight, stem_bias};
  for (const auto& b : blocks) {
    vars.insert(vars.end(), {b.dw_weight, b.dw_bias, b.norm_scale, b.norm_shift,
                             b.expand_weight, b.expand_bias, b.project_weight,
                             b.project_bias, b.layer_scale});
  }
  vars.push_back(head_weight);
  vars.push_back(head_bias);
  std::vector<NamedParam<T>> out;
  out.reserve(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i) {
    out.push_back({layout[i].first, layout[i].second, vars[i]});
  }
  return out;
}

template <typename T>
std::size_t RpnParams<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named()) total += p.var.value().size();
  return total;
}

template <typename T>
void RpnParams<T>::zero_grad() {
  for (auto& p : named()) p.var.zero_grad();
}

template <typename T>
template <typename U>
RpnParams<U> RpnParams<T>::cast() const {
  auto copy = [](const Var<T>& v) {
    return Var<U>::leaf(v.value().template cast<U>(), v.label());
  };
  RpnParams<U> out;
  out.stem_weight = copy(stem_weight);
  out.stem_bias = copy(stem_bias);
  for (std::size_t b = 0; b < kRpnBlocks; ++b) {
    const auto& s = blocks[b];
    auto& d = out.blocks[b];
    d.dw_weight = copy(s.dw_weight);
    d.dw_bias = copy(s.dw_bias);
    d.norm_scale = copy(s.norm_scale);
    d.norm_shift = copy(s.norm_shift);
    d.expand_weight = copy(s.expand_weight);
    d.expand_bias = copy(s.expand_bias);
    d.project_weight = copy(s.project_weight);
    d.project_bias = copy(s.project_bias);
    d.layer_scale = copy(s.layer_scale);
  }
  out.head_weight = copy(head_weight);
  out.head_bias = copy(head_bias);
  return out;
}

template <typename T>
RpnParams<T> build_rpn(std::uint64_t seed) {
  const auto layout = rpn_layout();
  Rng rng(seed);
  std::size_t i = 0;
  auto next = [&]() -> const std::pair<std::string, Dims>& { return layout[i++]; };

  RpnParams<T> p;
  {
    const auto& w = next();
    p.stem_weight = truncated_normal_leaf<T>(w.second, kRpnStemKernel * kRpnStemKernel, rng, w.first);
    const auto& b = next();
    p.stem_bias = filled_leaf<T>(b.second, 0.0, b.first);
  }
  for (auto& blk : p.blocks) {
    const auto& dw = next();
    blk.dw_weight = truncated_normal_leaf<T>(dw.second, kRpnDepthwiseKernel * kRpnDepthwiseKernel, rng, dw.first);
    const auto& dwb = next();
    blk.dw_bias = filled_leaf<T>(dwb.second, 0.0, dwb.first);
    const auto& ns = next();
    blk.norm_scale = filled_leaf<T>(ns.second, 1.0, ns.first);
    const auto& nb = next();
    blk.norm_shift = filled_leaf<T>(nb.second, 0.0, nb.first);
    const auto& ew = next();
    blk.expand_weight = truncated_normal_leaf<T>(ew.second, kRpnWidth, rng, ew.first);
    const auto& eb = next();
    blk.expand_bias = filled_leaf<T>(eb.second, 0.0, eb.first);
    const auto& pw = next();
    blk.project_weight = truncated_normal_leaf<T>(pw.second, kRpnHidden, rng, pw.first);
    const auto& pb = next();
    blk.project_bias = filled_leaf<T>(pb.second, 0.0, pb.first);
    const auto& ls = next();
    blk.layer_scale = filled_leaf<T>(ls.second, kRpnLayerScaleInit, ls.first);
  }
  const auto& hw = next();
  p.head_weight = filled_leaf<T>(hw.second, 0.0, hw.first);
  const auto& hb = next();
  p.head_bias = filled_leaf<T>(hb.second, 0.0, hb.first);

  if (p.parameter_count() != kRpnParameterCount) {
    throw ValidationError("RPN parameter count " + std::to_string(p.parameter_count()) +
                          " != " + std::to_string(kRpnParameterCount));
  }
  return p;
}

template <typename T>
Var<T> rpn_forward(Tape<T>& tape, const RpnParams<T>& params, const Var<T>& z) {
  const Shape s = z.shape();
  if (s.c != 1) {
    throw ValidationError("rpn_forward: expected 1 input channel, got " + std::to_string(s.c));
  }
  if (s.h < kRpnDepthwiseKernel || s.w < kRpnDepthwiseKernel) {
    throw ValidationError("rpn_forward: input " + s.str() + " smaller than the 7x7 support");
  }
  Var<T> f = ops::conv2d(tape, z, params.stem_weight, params.stem_bias);
  for (const auto& b : params.blocks) {
    Var<T> h = ops::depthwise_conv7(tape, f, b.dw_weight, b.dw_bias);
    h = ops::layer_norm_channels(tape, h, b.norm_scale, b.norm_shift,
                                 static_cast<T>(kRpnLayerNormEps));
    h = ops::pointwise_conv(tape, h, b.expand_weight, b.expand_bias);
    h = ops::gelu(tape, h);
    h = ops::pointwise_conv(tape, h, b.project_weight, b.project_bias);
    h = ops::scale_by_channel_vector(tape, h, b.layer_scale);
    f = ops::add(tape, f, h);
  }
  return ops::conv2d(tape, f, params.head_weight, params.head_bias);
}

std::uint64_t rpn_macs_per_pixel() {
  const std::uint64_t stem = kRpnWidth * kRpnStemKernel * kRpnStemKernel;
  const std::uint64_t block = kRpnWidth * kRpnDepthwiseKernel * kRpnDepthwiseKernel +
                              2 * kRpnWidth * kRpnHidden;
  const std::uint64_t head = kRpnWidth * kRpnStemKernel * kRpnStemKernel;
  return stem + kRpnBlocks * block + head;
}

std::uint64_t rpn_macs(std::size_t h, std::size_t w) {
  return rpn_macs_per_pixel() * static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);
}

template <typename T>
DespeckleProducts<T> despeckle(Tape<T>& tape, const RpnParams<T>& params,
                               const Tensor<T>& y, T eps) {
  Tensor<T> z(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < T(0) || !std::isfinite(y[i])) {
      throw ValidationError("despeckle: negative or non-finite pixel at index " +
                            std::to_string(i));
    }
    z[i] = std::log(y[i] + eps);
  }
  if (!z.all_finite()) throw NumericalError("despeckle: log of zero pixel with eps = 0");
  DespeckleProducts<T> out;
  out.z = Var<T>::constant(std::move(z));
  out.residual = rpn_forward(tape, params, out.z);
  out.z_hat = ops::sub(tape, out.z, out.residual);
  out.x_hat = ops::exp_map(tape, out.z_hat);
  out.r = ops::sub(tape, out.z, ops::log_map(tape, out.x_hat, eps));
  return out;
}

DespeckleResult despeckle_image(const RpnParams<float>& params,
                                const Tensor<float>& y, double eps) {
  Tape<float> tape(/*recording=*/false);
  auto p = despeckle(tape, params, y, static_cast<float>(eps));
  return DespeckleResult{p.x_hat.value(), p.r.value()};
}

template struct RpnParams<float>;
template struct RpnParams<double>;
template RpnParams<double> RpnParams<float>::cast<double>() const;
template RpnParams<float> RpnParams<double>::cast<float>() const;
template RpnParams<float> build_rpn<float>(std::uint64_t);
template RpnParams<double> build_rpn<double>(std::uint64_t);
template Var<float> rpn_forward(Tape<float>&, const RpnParams<float>&, const Var<float>&);
template Var<double> rpn_forward(Tape<double>&, const RpnParams<double>&, const Var<double>&);
template DespeckleProducts<float> despeckle(Tape<float>&, const RpnParams<float>&,
                                            const Tensor<float>&, float);
template DespeckleProducts<double> despeckle(Tape<double>&, const RpnParams<double>&,
                                             const Tensor<double>&, double);

}  // namespace sonospeck
