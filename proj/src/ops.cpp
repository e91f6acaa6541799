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

#include "sonospeck/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace sonospeck::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericalError(std::string("non-finite output in ") + op);
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      a.shape().str() + " vs " +
                                      b.shape().str());
}

template <typename T>
void require_vector(const Var<T>& v, std::size_t c, const char* what) {
  require(v.shape() == Shape{1, c, 1, 1},
          std::string(what) + " must have shape [1," + std::to_string(c) +
              ",1,1], got " + v.shape().str());
}

// Copies an h x w plane into an (h+2p) x (w+2p) buffer with the given
// boundary extension.
template <typename T>
void pad_plane(const T* src, std::size_t h, std::size_t w, std::size_t p,
               PaddingMode mode, T* dst) {
  const std::size_t pw = w + 2 * p;
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  const auto ip = static_cast<std::ptrdiff_t>(p);
  for (std::ptrdiff_t y = -ip; y < ih + ip; ++y) {
    T* row = dst + static_cast<std::size_t>(y + ip) * pw;
    if (mode == PaddingMode::kZero && (y < 0 || y >= ih)) {
      std::fill(row, row + pw, T(0));
      continue;
    }
    const T* srow = src + static_cast<std::size_t>(reflect_index(y, ih)) * w;
    for (std::ptrdiff_t x = -ip; x < 0; ++x) {
      row[x + ip] = mode == PaddingMode::kZero ? T(0) : srow[reflect_index(x, iw)];
    }
    std::copy(srow, srow + w, row + p);
    for (std::ptrdiff_t x = iw; x < iw + ip; ++x) {
      row[x + ip] = mode == PaddingMode::kZero ? T(0) : srow[reflect_index(x, iw)];
    }
  }
}

// Adjoint of pad_plane: accumulates a padded-plane gradient into the plane.
template <typename T>
void fold_plane(const T* dpad, std::size_t h, std::size_t w, std::size_t p,
                PaddingMode mode, T* dsrc) {
  const std::size_t pw = w + 2 * p;
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  const auto ip = static_cast<std::ptrdiff_t>(p);
  for (std::ptrdiff_t y = -ip; y < ih + ip; ++y) {
    if (mode == PaddingMode::kZero && (y < 0 || y >= ih)) continue;
    const T* row = dpad + static_cast<std::size_t>(y + ip) * pw;
    T* srow = dsrc + static_cast<std::size_t>(reflect_index(y, ih)) * w;
    for (std::ptrdiff_t x = -ip; x < iw + ip; ++x) {
      if (mode == PaddingMode::kZero && (x < 0 || x >= iw)) continue;
      srow[reflect_index(x, iw)] += row[x + ip];
    }
  }
}

void require_padding_fits(std::size_t k, const Shape& s, const char* op) {
  require(k % 2 == 1, std::string(op) + ": kernel size must be odd, got " +
                          std::to_string(k));
  require(k / 2 < s.h && k / 2 < s.w,
          std::string(op) + ": spatial size " + s.str() +
              " too small for kernel " + std::to_string(k));
}

// im2col over a padded sample: row (ci*k + ky)*k + kx holds the shifted
// plane for that tap.
template <typename T>
void im2col(const T* sample, std::size_t ci, std::size_t h, std::size_t w,
            std::size_t k, PaddingMode mode, std::vector<T>& padded,
            T* cols) {
  const std::size_t p = k / 2;
  const std::size_t pw = w + 2 * p;
  const std::size_t hw = h * w;
  padded.resize((h + 2 * p) * pw);
  for (std::size_t c = 0; c < ci; ++c) {
    pad_plane(sample + c * hw, h, w, p, mode, padded.data());
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const T* src = padded.data() + (y + ky) * pw + kx;
          std::copy(src, src + w, dst + y * w);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* dcols, std::size_t ci, std::size_t h, std::size_t w,
                std::size_t k, PaddingMode mode, std::vector<T>& dpadded,
                T* dsample) {
  const std::size_t p = k / 2;
  const std::size_t pw = w + 2 * p;
  const std::size_t hw = h * w;
  dpadded.resize((h + 2 * p) * pw);
  for (std::size_t c = 0; c < ci; ++c) {
    std::fill(dpadded.begin(), dpadded.end(), T(0));
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = dcols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = dpadded.data() + (y + ky) * pw + kx;
          const T* s = src + y * w;
          for (std::size_t x = 0; x < w; ++x) dst[x] += s[x];
        }
      }
    }
    fold_plane(dpadded.data(), h, w, p, mode, dsample + c * hw);
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
              const Var<T>& bias, PaddingMode mode) {
  const Shape xs = input.shape();
  const Shape ks = kernel.shape();
  require(ks.h == ks.w, "conv2d: kernel must be square, got " + ks.str());
  require(ks.c == xs.c, "conv2d: kernel expects " + std::to_string(ks.c) +
                            " input channels, input has " +
                            std::to_string(xs.c));
  require_padding_fits(ks.h, xs, "conv2d");
  require_vector(bias, ks.n, "conv2d bias");

  const std::size_t co = ks.n, ci = xs.c, k = ks.h, hw = xs.plane();
  const std::size_t taps = ci * k * k;
  const auto ehw = static_cast<Eigen::Index>(hw);
  Tensor<T> out(Shape{xs.n, co, xs.h, xs.w});
  std::vector<T> cols(taps * hw), padded;
  ConstMapMat<T> kmat(kernel.value().raw(), static_cast<Eigen::Index>(co),
                      static_cast<Eigen::Index>(taps));
  for (std::size_t n = 0; n < xs.n; ++n) {
    im2col(input.value().raw() + n * ci * hw, ci, xs.h, xs.w, k, mode, padded,
           cols.data());
    ConstMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(taps), ehw);
    MapMat<T> om(out.raw() + n * co * hw, static_cast<Eigen::Index>(co), ehw);
    om.noalias() = kmat * cm;
    for (std::size_t o = 0; o < co; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];
  }
  check_finite(out, "conv2d");

  return tape.record(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, mode, xs, co, ci, k, hw, taps](const Tensor<T>& g) mutable {
        const auto ehw = static_cast<Eigen::Index>(hw);
        std::vector<T> cols(taps * hw), dcols, buf;
        ConstMapMat<T> kmat(kernel.value().raw(), static_cast<Eigen::Index>(co),
                            static_cast<Eigen::Index>(taps));
        for (std::size_t n = 0; n < xs.n; ++n) {
          ConstMapMat<T> gm(g.raw() + n * co * hw, static_cast<Eigen::Index>(co), ehw);
          if (bias.requires_grad()) {
            T* db = bias.grad_buffer().raw();
            for (std::size_t o = 0; o < co; ++o) db[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (kernel.requires_grad()) {
            im2col(input.value().raw() + n * ci * hw, ci, xs.h, xs.w, k, mode,
                   buf, cols.data());
            ConstMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(taps), ehw);
            MapMat<T> dk(kernel.grad_buffer().raw(), static_cast<Eigen::Index>(co),
                         static_cast<Eigen::Index>(taps));
            dk.noalias() += gm * cm.transpose();
          }
          if (input.requires_grad()) {
            dcols.resize(taps * hw);
            MapMat<T> dcm(dcols.data(), static_cast<Eigen::Index>(taps), ehw);
            dcm.noalias() = kmat.transpose() * gm;
            col2im_add(dcols.data(), ci, xs.h, xs.w, k, mode, buf,
                       input.grad_buffer().raw() + n * ci * hw);
          }
        }
      });
}

template <typename T>
Var<T> depthwise_conv(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
                      const Var<T>& bias, PaddingMode mode) {
  const Shape xs = input.shape();
  const Shape ks = kernel.shape();
  require(ks.n == xs.c && ks.c == 1,
          "depthwise_conv: kernel " + ks.str() + " does not match " +
              std::to_string(xs.c) + " input channels");
  require(ks.h == ks.w, "depthwise_conv: kernel must be square");
  require_padding_fits(ks.h, xs, "depthwise_conv");
  require_vector(bias, xs.c, "depthwise_conv bias");

  const std::size_t k = ks.h, p = k / 2, h = xs.h, w = xs.w, hw = xs.plane();
  const std::size_t pw = w + 2 * p;
  Tensor<T> out(xs);
  std::vector<T> padded((h + 2 * p) * pw);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      pad_plane(input.value().plane(n, c).data(), h, w, p, mode, padded.data());
      T* o = out.plane(n, c).data();
      std::fill(o, o + hw, bias.value()[c]);
      const T* kc = kernel.value().raw() + c * k * k;
      for (std::size_t y = 0; y < h; ++y) {
        T* orow = o + y * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const T* prow = padded.data() + (y + ky) * pw;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T kv = kc[ky * k + kx];
            const T* src = prow + kx;
            for (std::size_t x = 0; x < w; ++x) orow[x] += kv * src[x];
          }
        }
      }
    }
  }
  check_finite(out, "depthwise_conv");

  return tape.record(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, mode, xs, k, p, h, w, pw](const Tensor<T>& g) mutable {
        std::vector<T> padded((h + 2 * p) * pw), dpad((h + 2 * p) * pw), lanes(w);
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t c = 0; c < xs.c; ++c) {
            const T* gp = g.plane(n, c).data();
            if (bias.requires_grad()) {
              bias.grad_buffer()[c] += ConstMapVec<T>(gp, static_cast<Eigen::Index>(h * w)).sum();
            }
            if (kernel.requires_grad()) {
              pad_plane(input.value().plane(n, c).data(), h, w, p, mode,
                        padded.data());
              T* dk = kernel.grad_buffer().raw() + c * k * k;
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  std::fill(lanes.begin(), lanes.end(), T(0));
                  for (std::size_t y = 0; y < h; ++y) {
                    const T* src = padded.data() + (y + ky) * pw + kx;
                    const T* grow = gp + y * w;
                    for (std::size_t x = 0; x < w; ++x) lanes[x] += grow[x] * src[x];
                  }
                  T s = 0;
                  for (T v : lanes) s += v;
                  dk[ky * k + kx] += s;
                }
              }
            }
            if (input.requires_grad()) {
              std::fill(dpad.begin(), dpad.end(), T(0));
              const T* kc = kernel.value().raw() + c * k * k;
              for (std::size_t y = 0; y < h; ++y) {
                const T* grow = gp + y * w;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  T* drow = dpad.data() + (y + ky) * pw;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const T kv = kc[ky * k + kx];
                    T* dst = drow + kx;
                    for (std::size_t x = 0; x < w; ++x) dst[x] += kv * grow[x];
                  }
                }
              }
              fold_plane(dpad.data(), h, w, p, mode,
                         input.grad_buffer().plane(n, c).data());
            }
          }
        }
      });
}

template <typename T>
Var<T> depthwise_conv7(Tape<T>& tape, const Var<T>& input, const Var<T>& kernel,
                       const Var<T>& bias, PaddingMode mode) {
  require(kernel.shape().h == 7 && kernel.shape().w == 7,
          "depthwise_conv7: kernel must be 7x7, got " + kernel.shape().str());
  return depthwise_conv(tape, input, kernel, bias, mode);
}

template <typename T>
Var<T> pointwise_conv(Tape<T>& tape, const Var<T>& input, const Var<T>& weight,
                      const Var<T>& bias) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  require(ws.h == 1 && ws.w == 1 && ws.c == xs.c,
          "pointwise_conv: weight " + ws.str() + " does not map " +
              std::to_string(xs.c) + " channels");
  require_vector(bias, ws.n, "pointwise_conv bias");
  const std::size_t co = ws.n, ci = xs.c, hw = xs.plane();
  const auto eco = static_cast<Eigen::Index>(co);
  const auto eci = static_cast<Eigen::Index>(ci);
  const auto ehw = static_cast<Eigen::Index>(hw);

  Tensor<T> out(Shape{xs.n, co, xs.h, xs.w});
  ConstMapMat<T> wm(weight.value().raw(), eco, eci);
  for (std::size_t n = 0; n < xs.n; ++n) {
    ConstMapMat<T> xm(input.value().raw() + n * ci * hw, eci, ehw);
    MapMat<T> om(out.raw() + n * co * hw, eco, ehw);
    om.noalias() = wm * xm;
    for (std::size_t o = 0; o < co; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];
  }
  check_finite(out, "pointwise_conv");

  return tape.record(
      std::move(out), {input, weight, bias},
      [input, weight, bias, xs, co, ci, hw](const Tensor<T>& g) mutable {
        const auto eco = static_cast<Eigen::Index>(co);
        const auto eci = static_cast<Eigen::Index>(ci);
        const auto ehw = static_cast<Eigen::Index>(hw);
        ConstMapMat<T> wm(weight.value().raw(), eco, eci);
        for (std::size_t n = 0; n < xs.n; ++n) {
          ConstMapMat<T> gm(g.raw() + n * co * hw, eco, ehw);
          if (bias.requires_grad()) {
            T* db = bias.grad_buffer().raw();
            for (std::size_t o = 0; o < co; ++o) db[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (weight.requires_grad()) {
            ConstMapMat<T> xm(input.value().raw() + n * ci * hw, eci, ehw);
            MapMat<T> dw(weight.grad_buffer().raw(), eco, eci);
            dw.noalias() += gm * xm.transpose();
          }
          if (input.requires_grad()) {
            MapMat<T> dx(input.grad_buffer().raw() + n * ci * hw, eci, ehw);
            dx.noalias() += wm.transpose() * gm;
          }
        }
      });
}

template <typename T>
Var<T> layer_norm_channels(Tape<T>& tape, const Var<T>& input,
                           const Var<T>& scale, const Var<T>& shift, T eps) {
  const Shape xs = input.shape();
  require(xs.c > 0, "layer_norm_channels: zero channels");
  require(eps > T(0), "layer_norm_channels: eps must be positive");
  require_vector(scale, xs.c, "layer_norm scale");
  require_vector(shift, xs.c, "layer_norm shift");
  const std::size_t c = xs.c, hw = xs.plane();
  const T inv_c = T(1) / static_cast<T>(c);

  Tensor<T> normed(xs);
  Tensor<T> out(xs);
  std::vector<T> rstd(xs.n * hw);
  std::vector<T> mean(hw), var(hw);
  for (std::size_t n = 0; n < xs.n; ++n) {
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.value().plane(n, ch).data();
      for (std::size_t i = 0; i < hw; ++i) mean[i] += x[i];
    }
    for (std::size_t i = 0; i < hw; ++i) mean[i] *= inv_c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.value().plane(n, ch).data();
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = x[i] - mean[i];
        var[i] += d * d;
      }
    }
    T* rs = rstd.data() + n * hw;
    for (std::size_t i = 0; i < hw; ++i) rs[i] = T(1) / std::sqrt(var[i] * inv_c + eps);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.value().plane(n, ch).data();
      T* nv = normed.plane(n, ch).data();
      T* o = out.plane(n, ch).data();
      const T a = scale.value()[ch], b = shift.value()[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        nv[i] = (x[i] - mean[i]) * rs[i];
        o[i] = a * nv[i] + b;
      }
    }
  }
  check_finite(out, "layer_norm_channels");

  return tape.record(
      std::move(out), {input, scale, shift},
      [input, scale, shift, xs, c, hw, inv_c, normed = std::move(normed),
       rstd = std::move(rstd)](const Tensor<T>& g) mutable {
        std::vector<T> sum_d(hw), sum_dn(hw);
        for (std::size_t n = 0; n < xs.n; ++n) {
          if (scale.requires_grad() || shift.requires_grad()) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T* gp = g.plane(n, ch).data();
              const T* nv = normed.plane(n, ch).data();
              ConstMapVec<T> gv(gp, static_cast<Eigen::Index>(hw));
              if (scale.requires_grad())
                scale.grad_buffer()[ch] += gv.dot(ConstMapVec<T>(nv, static_cast<Eigen::Index>(hw)));
              if (shift.requires_grad()) shift.grad_buffer()[ch] += gv.sum();
            }
          }
          if (!input.requires_grad()) continue;
          std::fill(sum_d.begin(), sum_d.end(), T(0));
          std::fill(sum_dn.begin(), sum_dn.end(), T(0));
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* gp = g.plane(n, ch).data();
            const T* nv = normed.plane(n, ch).data();
            const T a = scale.value()[ch];
            for (std::size_t i = 0; i < hw; ++i) {
              const T d = gp[i] * a;
              sum_d[i] += d;
              sum_dn[i] += d * nv[i];
            }
          }
          const T* rs = rstd.data() + n * hw;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* gp = g.plane(n, ch).data();
            const T* nv = normed.plane(n, ch).data();
            T* dx = input.grad_buffer().plane(n, ch).data();
            const T a = scale.value()[ch];
            for (std::size_t i = 0; i < hw; ++i) {
              dx[i] += rs[i] * (gp[i] * a - inv_c * (sum_d[i] + nv[i] * sum_dn[i]));
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(Tape<T>& tape, const Var<T>& input) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt2pi = T(0.5) * std::numbers::inv_sqrtpi_v<T> * std::numbers::sqrt2_v<T>;
  const auto len = static_cast<Eigen::Index>(input.value().size());
  Eigen::Map<const Arr> x(input.value().raw(), len);
  // Phi(x) and the local derivative Phi(x) + x phi(x), kept for backward.
  Arr cdf = T(0.5) * (T(1) + (x * inv_sqrt2).erf());
  Tensor<T> out(input.shape());
  Eigen::Map<Arr>(out.raw(), len) = x * cdf;
  check_finite(out, "gelu");
  if (!tape.recording() || !input.requires_grad()) {
    return tape.record(std::move(out), {input}, [](const Tensor<T>&) {});
  }
  Arr deriv = cdf + x * inv_sqrt2pi * (T(-0.5) * x.square()).exp();
  return tape.record(std::move(out), {input},
                     [input, deriv = std::move(deriv)](const Tensor<T>& g) mutable {
                       const auto len = static_cast<Eigen::Index>(g.size());
                       Eigen::Map<Arr>(input.grad_buffer().raw(), len) +=
                           Eigen::Map<const Arr>(g.raw(), len) * deriv;
                     });
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  check_finite(out, "add");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    if (a.requires_grad()) a.node()->accumulate(g);
    if (b.requires_grad()) b.node()->accumulate(g);
  });
}

template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  check_finite(out, "sub");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    if (a.requires_grad()) a.node()->accumulate(g);
    if (b.requires_grad()) {
      T* db = b.grad_buffer().raw();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  check_finite(out, "mul");
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) mutable {
    if (a.requires_grad()) {
      T* da = a.grad_buffer().raw();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      T* db = b.grad_buffer().raw();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  check_finite(out, "scale");
  return tape.record(std::move(out), {a}, [a, factor](const Tensor<T>& g) mutable {
    T* da = a.grad_buffer().raw();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> add_scalar(Tape<T>& tape, const Var<T>& a, T offset) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + offset;
  check_finite(out, "add_scalar");
  return tape.record(std::move(out), {a}, [a](const Tensor<T>& g) mutable {
    a.node()->accumulate(g);
  });
}

template <typename T>
Var<T> scale_by_channel_vector(Tape<T>& tape, const Var<T>& input,
                               const Var<T>& v) {
  const Shape xs = input.shape();
  require_vector(v, xs.c, "scale_by_channel_vector");
  Tensor<T> out(xs);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T s = v.value()[c];
      auto src = input.value().plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * s;
    }
  }
  check_finite(out, "scale_by_channel_vector");
  return tape.record(std::move(out), {input, v}, [input, v, xs](const Tensor<T>& g) mutable {
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        auto gp = g.plane(n, c);
        if (v.requires_grad()) {
          auto src = input.value().plane(n, c);
          T s = 0;
          for (std::size_t i = 0; i < gp.size(); ++i) s += gp[i] * src[i];
          v.grad_buffer()[c] += s;
        }
        if (input.requires_grad()) {
          const T s = v.value()[c];
          auto dx = input.grad_buffer().plane(n, c);
          for (std::size_t i = 0; i < gp.size(); ++i) dx[i] += gp[i] * s;
        }
      }
    }
  });
}

template <typename T>
Var<T> exp_map(Tape<T>& tape, const Var<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(input.value()[i]);
  check_finite(out, "exp_map");
  auto saved = out;
  return tape.record(std::move(out), {input},
                     [input, saved = std::move(saved)](const Tensor<T>& g) mutable {
                       T* dx = input.grad_buffer().raw();
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * saved[i];
                     });
}

template <typename T>
Var<T> log_map(Tape<T>& tape, const Var<T>& input, T eps) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = input.value()[i] + eps;
    if (!(v > T(0))) {
      throw NumericalError("log_map: non-positive argument " + std::to_string(v) +
                           " at element " + std::to_string(i));
    }
    out[i] = std::log(v);
  }
  check_finite(out, "log_map");
  return tape.record(std::move(out), {input}, [input, eps](const Tensor<T>& g) mutable {
    T* dx = input.grad_buffer().raw();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / (input.value()[i] + eps);
  });
}

template <typename T>
Var<T> abs_map(Tape<T>& tape, const Var<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(input.value()[i]);
  return tape.record(std::move(out), {input}, [input](const Tensor<T>& g) mutable {
    T* dx = input.grad_buffer().raw();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = input.value()[i];
      dx[i] += v > T(0) ? g[i] : (v < T(0) ? -g[i] : T(0));
    }
  });
}

template <typename T>
Var<T> hypot_map(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "hypot_map");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::sqrt(a.value()[i] * a.value()[i] + b.value()[i] * b.value()[i]);
  }
  check_finite(out, "hypot_map");
  auto saved = out;
  return tape.record(std::move(out), {a, b},
                     [a, b, saved = std::move(saved)](const Tensor<T>& g) mutable {
                       for (auto* v : {&a, &b}) {
                         if (!v->requires_grad()) continue;
                         T* d = v->grad_buffer().raw();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           if (saved[i] > T(0)) d[i] += g[i] * v->value()[i] / saved[i];
                         }
                       }
                     });
}

template <typename T>
Var<T> forward_diff(Tape<T>& tape, const Var<T>& input, Axis axis) {
  const Shape xs = input.shape();
  const bool horiz = axis == Axis::kHorizontal;
  require(horiz ? xs.w >= 2 : xs.h >= 2, "forward_diff: axis has fewer than 2 samples");
  const Shape os{xs.n, xs.c, horiz ? xs.h : xs.h - 1, horiz ? xs.w - 1 : xs.w};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          const T here = input.value().at(n, c, y, x);
          const T next = horiz ? input.value().at(n, c, y, x + 1)
                               : input.value().at(n, c, y + 1, x);
          out.at(n, c, y, x) = next - here;
        }
      }
    }
  }
  check_finite(out, "forward_diff");
  return tape.record(std::move(out), {input}, [input, os, horiz](const Tensor<T>& g) mutable {
    auto& dx = input.grad_buffer();
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t c = 0; c < os.c; ++c) {
        for (std::size_t y = 0; y < os.h; ++y) {
          for (std::size_t x = 0; x < os.w; ++x) {
            const T gv = g.at(n, c, y, x);
            dx.at(n, c, y, x) -= gv;
            if (horiz) {
              dx.at(n, c, y, x + 1) += gv;
            } else {
              dx.at(n, c, y + 1, x) += gv;
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> crop(Tape<T>& tape, const Var<T>& input, std::size_t top,
            std::size_t left, std::size_t h, std::size_t w) {
  const Shape xs = input.shape();
  require(top + h <= xs.h && left + w <= xs.w,
          "crop: window exceeds input " + xs.str());
  const Shape os{xs.n, xs.c, h, w};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out.at(n, c, y, x) = input.value().at(n, c, y + top, x + left);
  return tape.record(std::move(out), {input}, [input, os, top, left](const Tensor<T>& g) mutable {
    auto& dx = input.grad_buffer();
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t c = 0; c < os.c; ++c)
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t x = 0; x < os.w; ++x)
            dx.at(n, c, y + top, x + left) += g.at(n, c, y, x);
  });
}

template <typename T>
Var<T> pad_end(Tape<T>& tape, const Var<T>& input, std::size_t h,
               std::size_t w) {
  const Shape xs = input.shape();
  require(h >= xs.h && w >= xs.w, "pad_end: target smaller than input " + xs.str());
  Tensor<T> out(Shape{xs.n, xs.c, h, w});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t y = 0; y < xs.h; ++y)
        for (std::size_t x = 0; x < xs.w; ++x)
          out.at(n, c, y, x) = input.value().at(n, c, y, x);
  return tape.record(std::move(out), {input}, [input, xs](const Tensor<T>& g) mutable {
    auto& dx = input.grad_buffer();
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t c = 0; c < xs.c; ++c)
        for (std::size_t y = 0; y < xs.h; ++y)
          for (std::size_t x = 0; x < xs.w; ++x)
            dx.at(n, c, y, x) += g.at(n, c, y, x);
  });
}

template <typename T>
Var<T> select_batch(Tape<T>& tape, const Var<T>& input, std::size_t i) {
  require(i < input.shape().n, "select_batch: index out of range");
  Tensor<T> out = input.value().sample(i);
  const std::size_t len = out.size();
  return tape.record(std::move(out), {input}, [input, i, len](const Tensor<T>& g) mutable {
    T* dx = input.grad_buffer().raw() + i * len;
    for (std::size_t j = 0; j < len; ++j) dx[j] += g[j];
  });
}

template <typename T>
Var<T> reduce_sum(Tape<T>& tape, const Var<T>& input) {
  require(input.value().size() > 0, "reduce_sum: empty tensor");
  T s = 0;
  for (T v : input.value().data()) s += v;
  auto out = Tensor<T>::scalar(s);
  check_finite(out, "reduce_sum");
  return tape.record(std::move(out), {input}, [input](const Tensor<T>& g) mutable {
    const T gv = g[0];
    for (T& d : input.grad_buffer().data()) d += gv;
  });
}

template <typename T>
Var<T> reduce_mean(Tape<T>& tape, const Var<T>& input) {
  const std::size_t count = input.value().size();
  require(count > 0, "reduce_mean: empty tensor");
  T s = 0;
  for (T v : input.value().data()) s += v;
  auto out = Tensor<T>::scalar(s / static_cast<T>(count));
  check_finite(out, "reduce_mean");
  return tape.record(std::move(out), {input}, [input, count](const Tensor<T>& g) mutable {
    const T gv = g[0] / static_cast<T>(count);
    for (T& d : input.grad_buffer().data()) d += gv;
  });
}

template <typename T>
Var<T> reduce_var(Tape<T>& tape, const Var<T>& input) {
  const std::size_t count = input.value().size();
  require(count > 0, "reduce_var: empty tensor");
  T s = 0;
  for (T v : input.value().data()) s += v;
  const T mean = s / static_cast<T>(count);
  T ss = 0;
  for (T v : input.value().data()) ss += (v - mean) * (v - mean);
  auto out = Tensor<T>::scalar(ss / static_cast<T>(count));
  check_finite(out, "reduce_var");
  return tape.record(std::move(out), {input}, [input, count, mean](const Tensor<T>& g) mutable {
    const T k = T(2) * g[0] / static_cast<T>(count);
    T* dx = input.grad_buffer().raw();
    for (std::size_t i = 0; i < count; ++i) dx[i] += k * (input.value()[i] - mean);
  });
}

#define SONOSPECK_INSTANTIATE_OPS(T)                                              \
  template Var<T> conv2d(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                         PaddingMode);                                          \
  template Var<T> depthwise_conv(Tape<T>&, const Var<T>&, const Var<T>&,        \
                                 const Var<T>&, PaddingMode);                   \
  template Var<T> depthwise_conv7(Tape<T>&, const Var<T>&, const Var<T>&,       \
                                  const Var<T>&, PaddingMode);                  \
  template Var<T> pointwise_conv(Tape<T>&, const Var<T>&, const Var<T>&,        \
                                 const Var<T>&);                                \
  template Var<T> layer_norm_channels(Tape<T>&, const Var<T>&, const Var<T>&,   \
                                      const Var<T>&, T);                        \
  template Var<T> gelu(Tape<T>&, const Var<T>&);                                \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> sub(Tape<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> mul(Tape<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> scale(Tape<T>&, const Var<T>&, T);                            \
  template Var<T> add_scalar(Tape<T>&, const Var<T>&, T);                       \
  template Var<T> scale_by_channel_vector(Tape<T>&, const Var<T>&,              \
                                          const Var<T>&);                       \
  template Var<T> exp_map(Tape<T>&, const Var<T>&);                             \
  template Var<T> log_map(Tape<T>&, const Var<T>&, T);                          \
  template Var<T> abs_map(Tape<T>&, const Var<T>&);                             \
  template Var<T> hypot_map(Tape<T>&, const Var<T>&, const Var<T>&);            \
  template Var<T> forward_diff(Tape<T>&, const Var<T>&, Axis);                  \
  template Var<T> crop(Tape<T>&, const Var<T>&, std::size_t, std::size_t,       \
                       std::size_t, std::size_t);                               \
  template Var<T> pad_end(Tape<T>&, const Var<T>&, std::size_t, std::size_t);   \
  template Var<T> select_batch(Tape<T>&, const Var<T>&, std::size_t);           \
  template Var<T> reduce_sum(Tape<T>&, const Var<T>&);                          \
  template Var<T> reduce_mean(Tape<T>&, const Var<T>&);                         \
  template Var<T> reduce_var(Tape<T>&, const Var<T>&);

SONOSPECK_INSTANTIATE_OPS(float)
SONOSPECK_INSTANTIATE_OPS(double)

#undef SONOSPECK_INSTANTIATE_OPS

}  // namespace sonospeck::ops
