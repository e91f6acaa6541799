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


#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "sonospeck/errors.hpp"
#include "sonospeck/evalkit.hpp"
#include "sonospeck/objective.hpp"
#include "sonospeck/rpn.hpp"
#include "sonospeck/speckle.hpp"

using namespace sonospeck;

namespace {

Tensor<float> random_positive(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(Shape{1, 1, h, w});
  for (auto& v : t.data()) v = static_cast<float>(0.05 + rng.uniform());
  return t;
}

Tensor<float> affine(const Tensor<float>& t, float a, float b) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = a * t[i] + b;
  return out;
}

}  // namespace

TEST_CASE("identity denoiser scores infinity") {
  const auto s = make_scene(SceneKind::kPiecewise, 128, 4, 4, 1);
  const auto rep = mscore(s.noisy, s.noisy, MScoreConfig{});
  CHECK(rep.n_blocks_total == 25);
  CHECK(rep.n_blocks_selected == 0);
  CHECK(std::isinf(rep.m_value));
}

TEST_CASE("clean oracle on pure speckle scores below 8") {
  const auto s = make_scene(SceneKind::kConstant, 1000, 4, 4, 2);  // 10^6 speckle samples
  const auto rep = mscore(s.noisy, s.clean, MScoreConfig{});
  CHECK(rep.n_blocks_total == 1600);
  CHECK(rep.n_blocks_selected > 1400);
  CHECK(rep.m_value < 8.0);
  CHECK(rep.m_value == doctest::Approx((rep.mean_enl_dev_pct + rep.mean_mu_dev_pct) / 2));
}

TEST_CASE("a biased ratio image is punished") {
  const auto s = make_scene(SceneKind::kConstant, 250, 4, 4, 3);
  const auto fair = mscore(s.noisy, s.clean, MScoreConfig{});
  const auto biased = mscore(s.noisy, affine(s.clean, 1 / 1.5f, 0), MScoreConfig{});
  CHECK(biased.n_blocks_selected < fair.n_blocks_selected);
  CHECK(biased.n_blocks_selected == 0);
}

TEST_CASE("mscore is invariant to joint rescaling") {
  const auto s = make_scene(SceneKind::kPiecewise, 250, 4, 4, 4);
  const auto den = median_filter(s.noisy, 5);
  const auto a = mscore(s.noisy, den, MScoreConfig{});
  const auto b = mscore(affine(s.noisy, 3.0f, 0), affine(den, 3.0f, 0), MScoreConfig{});
  CHECK(a.n_blocks_selected == b.n_blocks_selected);
  CHECK(a.m_value == doctest::Approx(b.m_value).epsilon(1e-4));
}

TEST_CASE("M-score ordering: oracle, median filter, identity") {
  for (double L : {1.0, 4.0}) {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto s = make_scene(SceneKind::kPiecewise, 128, 4, L, 100 + seed);
      MScoreConfig cfg;
      cfg.nominal_looks = L;
      const double oracle = mscore(s.noisy, s.clean, cfg).m_value;
      const double med = mscore(s.noisy, median_filter(s.noisy, 3), cfg).m_value;
      const double ident = mscore(s.noisy, s.noisy, cfg).m_value;
      if (oracle < med && std::isinf(ident)) ++ok;
    }
    CAPTURE(L);
    CHECK(ok >= 9);
  }
}

TEST_CASE("pooled M-score over several images") {
  std::vector<Tensor<float>> noisy, clean;
  for (std::uint64_t k = 0; k < 3; ++k) {
    const auto s = make_scene(SceneKind::kConstant, 100, 4, 4, 30 + k);
    noisy.push_back(s.noisy);
    clean.push_back(s.clean);
  }
  const auto rep = mscore_pooled(noisy, clean, MScoreConfig{});
  CHECK(rep.n_blocks_total == 48);
  CHECK(std::isfinite(rep.m_value));
}

TEST_CASE("M-score argument checks") {
  const auto a = random_positive(50, 50, 1);
  CHECK_THROWS_AS(mscore(a, random_positive(50, 40, 1), MScoreConfig{}), ValidationError);
  MScoreConfig bad;
  bad.block_size = 0;
  CHECK_THROWS_AS(mscore(a, a, bad), ValidationError);
  CHECK_THROWS_AS(ratio_image(a, affine(a, -1, 0), 1e-6), ValidationError);
}

TEST_CASE("edge preservation index") {
  const auto n = random_positive(40, 30, 5);
  CHECK(epi(n, n, Axis::kHorizontal) == 1.0);
  CHECK(epi(n, n, Axis::kVertical) == 1.0);
  const auto r = epi_report(n, n);
  CHECK(r.epi_hd == 1.0);
  CHECK(r.epi_vd == 1.0);
  CHECK(epi(n, Tensor<float>(n.shape(), 0.3f), Axis::kHorizontal) == 0.0);
  CHECK(epi(n, affine(n, 0.5f, 0.2f), Axis::kVertical) == doctest::Approx(0.5).epsilon(1e-5));

  const auto d = random_positive(40, 30, 6);
  const double base = epi(n, d, Axis::kHorizontal);
  CHECK(epi(affine(n, 2.5f, 0.1f), affine(d, 2.5f, 0.1f), Axis::kHorizontal) ==
        doctest::Approx(base).epsilon(1e-5));

  CHECK_THROWS_AS(epi(Tensor<float>(n.shape(), 0.4f), n, Axis::kHorizontal), NumericalError);
}

TEST_CASE("peak signal to noise ratio") {
  const Tensor<float> ref(Shape{1, 1, 10, 10}, 0.5f);
  CHECK(std::isinf(psnr(ref, ref)));
  CHECK(psnr(ref, affine(ref, 1, 0.1f)) == doctest::Approx(20.0).epsilon(1e-5));
  Tensor<float> half(ref.shape(), 0.5f);
  for (std::size_t i = 0; i < 50; ++i) half[i] = 0.7f;
  CHECK(psnr(ref, half) == doctest::Approx(16.9897).epsilon(1e-4));
  double prev = INFINITY;
  for (float d : {0.01f, 0.02f, 0.05f, 0.1f, 0.3f}) {
    const double p = psnr(ref, affine(ref, 1, d));
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("throughput benchmark") {
  const auto rep = bench_throughput(build_rpn<float>(0), 32, 32, 2);
  CHECK(rep.images_per_sec > 0);
  CHECK(rep.macs == rpn_macs(32, 32));
  CHECK_FALSE(rep.hardware.empty());
  CHECK_THROWS_AS(bench_throughput(build_rpn<float>(0), 32, 32, 2, 1), ValidationError);
}
