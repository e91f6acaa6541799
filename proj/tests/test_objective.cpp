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
#include <vector>

#include "sonospeck/errors.hpp"
#include "sonospeck/objective.hpp"
#include "sonospeck/rpn.hpp"
#include "sonospeck/speckle.hpp"

using namespace sonospeck;

namespace {

using V = Var<double>;

V cst(Tensor<double> t) { return V::constant(std::move(t)); }

double value(const V& v) { return v.value().item(); }

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// A residual with exactly zero mean and the requested population variance.
Tensor<double> standardized(Shape s, std::uint64_t seed, double var) {
  auto t = random_tensor(s, seed);
  double m = 0, m2 = 0;
  for (double v : t.data()) m += v;
  m /= static_cast<double>(t.size());
  for (double v : t.data()) m2 += (v - m) * (v - m);
  m2 /= static_cast<double>(t.size());
  for (auto& v : t.data()) v = (v - m) * std::sqrt(var / m2);
  return t;
}

// Products of a hypothetical network on a given y and r.
DespeckleProducts<double> products_for(const Tensor<double>& y, const Tensor<double>& r,
                                       double eps) {
  DespeckleProducts<double> p;
  Tensor<double> z(y.shape()), zh(y.shape()), xh(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    z[i] = std::log(y[i] + eps);
    zh[i] = z[i] - r[i];
    xh[i] = std::exp(zh[i]);
  }
  p.z = cst(z);
  p.residual = cst(r);
  p.z_hat = cst(zh);
  p.x_hat = cst(xh);
  Tensor<double> rr(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) rr[i] = z[i] - std::log(xh[i] + eps);
  p.r = cst(rr);
  return p;
}

}  // namespace

TEST_CASE("statistical loss") {
  Tape<double> tape(false);
  CHECK(value(loss_stat(tape, cst(Tensor<double>(Shape{2, 1, 4, 4})), 0.1175)) ==
        doctest::Approx(0.1175));
  CHECK(value(loss_stat(tape, cst(standardized(Shape{1, 1, 8, 8}, 1, 0.1175)), 0.1175)) ==
        doctest::Approx(0.0).scale(1));
  Tensor<double> r(Shape{1, 1, 2, 2}, std::vector<double>{0.1, -0.1, 0.2, -0.2});
  CHECK(value(loss_stat(tape, cst(r), 0.1175)) == doctest::Approx(0.0925));
  Tensor<double> flipped(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) flipped[i] = -r[i];
  CHECK(value(loss_stat(tape, cst(flipped), 0.1175)) == value(loss_stat(tape, cst(r), 0.1175)));
}

TEST_CASE("statistical loss averages per-patch terms") {
  Tape<double> tape(false);
  // patch 0 is the hand example, patch 1 is all zeros: (0.0925 + 0.1175) / 2.
  Tensor<double> r(Shape{2, 1, 2, 2}, std::vector<double>{0.1, -0.1, 0.2, -0.2, 0, 0, 0, 0});
  CHECK(value(loss_stat(tape, cst(r), 0.1175)) == doctest::Approx(0.105));
  // Over the pooled batch: mean 0, var 0.0125.
  CHECK(value(loss_stat(tape, cst(r), 0.1175, StatScope::kPerBatch)) == doctest::Approx(0.105));
  Tensor<double> shifted(Shape{2, 1, 1, 2}, std::vector<double>{1, 1, -1, -1});
  CHECK(value(loss_stat(tape, cst(shifted), 0.0)) == doctest::Approx(1.0));
  CHECK(value(loss_stat(tape, cst(shifted), 0.0, StatScope::kPerBatch)) == doctest::Approx(1.0));
}

TEST_CASE("structural loss") {
  Tape<double> tape(false);
  const auto flat = cst(Tensor<double>(Shape{1, 1, 4, 4}, 0.5));
  CHECK(value(loss_str(tape, cst(Tensor<double>(Shape{1, 1, 4, 4}, 0.3)),
                       cst(random_tensor(Shape{1, 1, 4, 4}, 3)), 0.1)) == 0.0);

  Tensor<double> step(Shape{1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y) step.at(0, 0, y, 3) = 1.0;
  CHECK(value(loss_str(tape, cst(step), flat, 0.1)) == doctest::Approx(1.0 / 6));

  // An edge in x_hat at the same place switches the penalty off.
  Tensor<double> edge(Shape{1, 1, 4, 4}, 0.1);
  for (std::size_t y = 0; y < 4; ++y) edge.at(0, 0, y, 3) = 5.0;
  CHECK(value(loss_str(tape, cst(step), cst(edge), 0.1)) < 1e-3 / 6);

  for (std::uint64_t s = 0; s < 5; ++s) {
    CHECK(value(loss_str(tape, cst(random_tensor(Shape{2, 1, 5, 6}, s)),
                         cst(random_tensor(Shape{2, 1, 5, 6}, s + 50)), 0.1)) > 0.0);
  }
  CHECK_THROWS_AS(loss_str(tape, cst(step), flat, 0.0), ValidationError);
}

TEST_CASE("median prior") {
  Tensor<double> y(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 100, 6, 7, 8, 9});
  CHECK(median_filter(y, 3).at(0, 0, 1, 1) == 6.0);

  Tape<double> tape(false);
  const auto med = median_filter(y, 3);
  Tensor<double> target(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) target[i] = std::log(med[i] + 1e-6);
  CHECK(value(loss_med(tape, cst(target), y, 3, 1e-6)) == doctest::Approx(0.0).scale(1));

  const Tensor<double> c(Shape{1, 1, 5, 5}, 0.4);
  const auto zh = random_tensor(c.shape(), 8);
  double expected = 0;
  for (double v : zh.data()) expected += std::abs(v - std::log(0.4 + 1e-6));
  expected /= 25;
  CHECK(value(loss_med(tape, cst(zh), c, 3, 1e-6)) == doctest::Approx(expected));
}

TEST_CASE("median target carries no gradient") {
  Tape<double> tape;
  auto zh = V::leaf(random_tensor(Shape{1, 1, 5, 5}, 2));
  const auto y = Tensor<double>(Shape{1, 1, 5, 5}, 0.3);
  tape.backward(loss_med(tape, zh, y, 3, 1e-6));
  for (std::size_t i = 0; i < 25; ++i) {
    const double sign = zh.value()[i] > std::log(0.3 + 1e-6) ? 1.0 : -1.0;
    CHECK(zh.grad()[i] == doctest::Approx(sign / 25));
  }
}

TEST_CASE("curriculum weight") {
  CHECK(beta_schedule(0, 1.0, 30) == 1.0);
  CHECK(beta_schedule(15, 1.0, 30) == 0.5);
  CHECK(beta_schedule(30, 1.0, 30) == 0.0);
  CHECK(beta_schedule(45, 1.0, 30) == 0.0);
  CHECK(beta_schedule(0, 2.5, 10) == 2.5);
  CHECK_THROWS_AS(beta_schedule(-1, 1.0, 30), ValidationError);
}

TEST_CASE("weighted total") {
  const double eps = 1e-6;
  Rng rng(4);
  Tensor<double> y(Shape{2, 1, 8, 8});
  for (auto& v : y.data()) v = 0.05 + rng.uniform();
  const auto p = products_for(y, random_tensor(y.shape(), 5, 0.3), eps);

  LossConfig only_med;
  only_med.gamma = 0;
  only_med.lambda = 0;
  Tape<double> tape(false);
  const auto a = loss_total(tape, p, y, only_med, 0.2838, 0);
  CHECK(a.breakdown.total == doctest::Approx(a.breakdown.l_med));

  LossConfig cfg;
  cfg.lambda = 0.3;
  cfg.gamma = 0.7;
  for (double epoch : {0.0, 7.0, 12.5, 40.0}) {
    const auto t = loss_total(tape, p, y, cfg, 0.2838, epoch);
    const auto& b = t.breakdown;
    CHECK(std::abs(b.total - (b.beta_t * b.l_med + 0.7 * b.l_stat + 0.3 * b.l_str)) < 1e-7);
    CHECK(b.total == t.total.value().item());
  }
}

TEST_CASE("identity mapping pays exactly gamma times the target variance") {
  const double eps = 1e-6, sigma2 = trigamma(4);
  Rng rng(8);
  Tensor<double> y(Shape{1, 1, 16, 16});
  for (auto& v : y.data()) v = 0.5 * rng.gamma(4) / 4;
  LossConfig cfg;
  cfg.gamma = 1.3;
  Tape<double> tape(false);
  const auto id =
      loss_total(tape, products_for(y, Tensor<double>(y.shape()), eps), y, cfg, sigma2, 30);
  CHECK(id.breakdown.l_str < 1e-6);
  CHECK(id.breakdown.total == doctest::Approx(1.3 * sigma2));
}

TEST_CASE("identity is excluded by the statistical term") {
  // Flat scene, beta = 0: a residual with mean 0 and variance sigma2 beats r = 0.
  const double eps = 1e-6, sigma2 = trigamma(4);
  LossConfig cfg;
  const Tensor<double> x(Shape{1, 1, 32, 32}, 0.5);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto r = standardized(x.shape(), s, sigma2);
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * std::exp(r[i]) - eps;
    Tape<double> tape(false);
    const double at_identity =
        loss_total(tape, products_for(y, Tensor<double>(y.shape()), eps), y, cfg, sigma2, 30)
            .breakdown.total;
    const auto good = loss_total(tape, products_for(y, r, eps), y, cfg, sigma2, 30).breakdown;
    CHECK(at_identity == doctest::Approx(cfg.gamma * sigma2));
    CHECK(good.l_stat < 1e-5);
    CHECK(at_identity > good.total);
  }
}

TEST_CASE("curriculum has no jump larger than beta0 * l_med / T") {
  const double eps = 1e-6;
  Rng rng(12);
  Tensor<double> y(Shape{1, 1, 12, 12});
  for (auto& v : y.data()) v = 0.1 + rng.uniform();
  const auto p = products_for(y, random_tensor(y.shape(), 13, 0.2), eps);
  LossConfig cfg;
  Tape<double> tape(false);
  for (int t = 0; t < 40; ++t) {
    const auto a = loss_total(tape, p, y, cfg, 0.2838, t).breakdown;
    const auto b = loss_total(tape, p, y, cfg, 0.2838, t + 1).breakdown;
    CHECK(std::abs(a.total - b.total) <= cfg.beta0 * a.l_med / cfg.curriculum_epochs + 1e-12);
  }
}

TEST_CASE("losses stay finite with finite gradients on a real network") {
  auto params = build_rpn<double>(3);
  Rng rng(4);
  for (auto& v : params.head_weight.mutable_value().data()) v = 0.1 * rng.normal();
  Tensor<double> y(Shape{2, 1, 12, 12});
  for (auto& v : y.data()) v = rng.uniform();  // zeros allowed through eps
  y[0] = 0.0;
  Tape<double> tape;
  const auto prod = despeckle(tape, params, y, 1e-6);
  const auto terms = loss_total(tape, prod, y, LossConfig{}, 0.2838, 3);
  CHECK(std::isfinite(terms.breakdown.total));
  tape.backward(terms.total);
  for (const auto& np : params.named()) CHECK(np.var.grad().all_finite());
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.median_window = 4;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(parse_stat_scope("batch") == StatScope::kPerBatch);
}
