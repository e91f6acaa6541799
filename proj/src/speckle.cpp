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

#include "sonospeck/speckle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace sonospeck {

double trigamma(double looks) {
  if (!(looks > 0.0) || !std::isfinite(looks)) {
    throw ValidationError("trigamma: looks must be positive and finite, got " +
                          std::to_string(looks));
  }
  // Upward recurrence psi'(x) = 1/x^2 + psi'(x+1) until x >= 8, then the
  // asymptotic series 1/x + 1/(2x^2) + sum B_2k / x^(2k+1).
  double acc = 0.0;
  double x = looks;
  while (x < 8.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 6.0 +
              inv2 * (-1.0 / 30.0 +
                      inv2 * (1.0 / 42.0 +
                              inv2 * (-1.0 / 30.0 +
                                      inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0))))));
  return acc + inv + 0.5 * inv2 + inv * series;
}

double looks_from_variance(double sigma2) {
  const double upper = trigamma(0.5);
  if (!(sigma2 > 0.0) || sigma2 > upper) {
    throw ValidationError("looks_from_variance: variance " +
                          std::to_string(sigma2) + " outside (0, " +
                          std::to_string(upper) + "]");
  }
  // trigamma is strictly decreasing; trigamma(L) > 1/L brackets the root
  // below 2/sigma2 + 1.
  double lo = 0.5;
  double hi = 2.0 / sigma2 + 1.0;
  for (int it = 0; it < 400 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (trigamma(mid) > sigma2) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

SpeckleSpec SpeckleSpec::from_looks(double looks) {
  return SpeckleSpec{looks, trigamma(looks)};
}

SpeckleSpec SpeckleSpec::from_variance(double sigma2) {
  return SpeckleSpec{looks_from_variance(sigma2), sigma2};
}

void fill_speckle(std::span<float> out, double looks, Rng& rng) {
  if (!(looks > 0.0)) {
    throw ValidationError("speckle looks must be positive");
  }
  const double scale = 1.0 / looks;
  for (float& v : out) {
    float s;
    // A float can round an extremely small draw to 0; keep samples > 0.
    do {
      s = static_cast<float>(rng.gamma(looks) * scale);
    } while (!(s > 0.0f));
    v = s;
  }
}

Tensor<float> sample_speckle(Shape shape, double looks, std::uint64_t seed) {
  Tensor<float> out(shape);
  Rng rng = Rng::stream(seed, 0x5eed);
  fill_speckle(out.data(), looks, rng);
  return out;
}

Tensor<float> to_log(const Tensor<float>& y, double eps) {
  if (!(eps >= 0.0)) throw ValidationError("to_log: eps must be >= 0");
  Tensor<float> z(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0f || !std::isfinite(y[i])) {
      throw ValidationError("to_log: negative or non-finite pixel at index " +
                            std::to_string(i));
    }
    const double v = static_cast<double>(y[i]) + eps;
    if (!(v > 0.0)) {
      throw NumericalError("to_log: zero pixel with eps = 0 at index " +
                           std::to_string(i));
    }
    z[i] = static_cast<float>(std::log(v));
  }
  return z;
}

Tensor<float> from_log(const Tensor<float>& z_hat) {
  Tensor<float> x(z_hat.shape());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::exp(z_hat[i]);
  if (!x.all_finite()) throw NumericalError("from_log: overflow");
  return x;
}

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "constant") return SceneKind::kConstant;
  if (name == "piecewise") return SceneKind::kPiecewise;
  if (name == "blobs") return SceneKind::kBlobs;
  throw ValidationError("unknown scene kind '" + name +
                        "' (expected constant, piecewise or blobs)");
}

std::string to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::kConstant:
      return "constant";
    case SceneKind::kPiecewise:
      return "piecewise";
    case SceneKind::kBlobs:
      return "blobs";
  }
  return "?";
}

namespace {

constexpr double kMinReflectivity = 0.1;
constexpr double kMaxReflectivity = 1.0;

// Two levels centred geometrically in [0.1, 1].
std::pair<double, double> level_pair(double contrast) {
  const double centre = std::sqrt(kMinReflectivity * kMaxReflectivity);
  const double half = std::sqrt(contrast);
  return {centre / half, centre * half};
}

void draw_piecewise(Tensor<float>& clean, double contrast, Rng& rng) {
  const auto [lo, hi] = level_pair(contrast);
  const std::size_t size = clean.shape().h;
  const double s = static_cast<double>(size);
  // Half-plane through a point near the centre, XOR an axis-aligned box.
  const double theta = rng.uniform() * std::numbers::pi;
  const double offset = (rng.uniform() - 0.5) * 0.6 * s;
  const double ct = std::cos(theta), st = std::sin(theta);
  const std::size_t bw = size / 6 + rng.uniform_index(size / 3);
  const std::size_t bh = size / 6 + rng.uniform_index(size / 3);
  const std::size_t bx = rng.uniform_index(size - bw);
  const std::size_t by = rng.uniform_index(size - bh);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) - 0.5 * s;
      const double py = static_cast<double>(y) - 0.5 * s;
      const bool side = px * ct + py * st > offset;
      const bool box = x >= bx && x < bx + bw && y >= by && y < by + bh;
      clean.at(0, 0, y, x) = static_cast<float>((side != box) ? hi : lo);
    }
  }
}

void draw_blobs(Tensor<float>& clean, double contrast, Rng& rng) {
  const auto [lo, hi] = level_pair(contrast);
  (void)hi;
  const std::size_t size = clean.shape().h;
  const double s = static_cast<double>(size);
  struct Blob {
    double cx, cy, radius, weight;
  };
  std::vector<Blob> blobs(6);
  for (auto& b : blobs) {
    b.cx = rng.uniform() * s;
    b.cy = rng.uniform() * s;
    b.radius = s * (1.0 / 12.0 + rng.uniform() * (1.0 / 5.0 - 1.0 / 12.0));
    b.weight = 0.5 + rng.uniform();
  }
  std::vector<double> field(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double v = 0.0;
      for (const auto& b : blobs) {
        const double dx = static_cast<double>(x) - b.cx;
        const double dy = static_cast<double>(y) - b.cy;
        v += b.weight * std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
      }
      field[y * size + x] = v;
    }
  }
  const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
  const double range = std::max(*mx - *mn, 1e-12);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double t = (field[i] - *mn) / range;
    clean[i] = static_cast<float>(lo * std::pow(contrast, t));
  }
}

}  // namespace

SyntheticScene make_scene(SceneKind kind, std::size_t size, double contrast,
                          double looks, std::uint64_t seed) {
  if (size < 32) throw ValidationError("make_scene: size must be >= 32");
  if (!(contrast > 1.0)) throw ValidationError("make_scene: contrast must be > 1");
  if (contrast > kMaxReflectivity / kMinReflectivity) {
    throw ValidationError("make_scene: contrast above 10 does not fit in [0.1, 1]");
  }
  if (!(looks > 0.0)) throw ValidationError("make_scene: looks must be positive");

  SyntheticScene scene;
  scene.looks_used = looks;
  scene.clean = Tensor<float>(Shape{1, 1, size, size});
  Rng structure = Rng::stream(seed, 1);
  switch (kind) {
    case SceneKind::kConstant:
      scene.clean.fill(0.5f);
      break;
    case SceneKind::kPiecewise:
      draw_piecewise(scene.clean, contrast, structure);
      break;
    case SceneKind::kBlobs:
      draw_blobs(scene.clean, contrast, structure);
      break;
  }
  scene.noisy = Tensor<float>(scene.clean.shape());
  Rng speckle = Rng::stream(seed, 2);
  fill_speckle(scene.noisy.data(), looks, speckle);
  for (std::size_t i = 0; i < scene.noisy.size(); ++i) {
    scene.noisy[i] *= scene.clean[i];
  }
  return scene;
}

namespace {

template <typename T>
double enl_impl(std::span<const T> region) {
  if (region.empty()) throw ValidationError("enl: empty region");
  double sum = 0.0;
  for (T v : region) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(region.size());
  double ss = 0.0;
  for (T v : region) {
    const double d = static_cast<double>(v) - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(region.size());
  if (var == 0.0) return std::numeric_limits<double>::infinity();
  return mean * mean / var;
}

}  // namespace

double enl(std::span<const float> region) { return enl_impl(region); }
double enl(std::span<const double> region) { return enl_impl(region); }

double estimate_looks(const Tensor<float>& noisy, std::size_t block) {
  const Shape s = noisy.shape();
  if (block == 0 || block > s.h || block > s.w) {
    throw ValidationError("estimate_looks: block size does not fit the image");
  }
  std::vector<double> values;
  std::vector<float> tile(block * block);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t by = 0; by + block <= s.h; by += block) {
        for (std::size_t bx = 0; bx + block <= s.w; bx += block) {
          for (std::size_t y = 0; y < block; ++y)
            for (std::size_t x = 0; x < block; ++x)
              tile[y * block + x] = noisy.at(n, c, by + y, bx + x);
          values.push_back(enl(tile));
        }
      }
    }
  }
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace sonospeck
