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

#include "sonospeck/autodiff.hpp"
#include "sonospeck/errors.hpp"
#include "sonospeck/gradcheck.hpp"
#include "sonospeck/ops.hpp"
#include "sonospeck/rng.hpp"

using namespace sonospeck;
using namespace sonospeck::ops;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

Var<double> cst(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

}  // namespace

TEST_CASE("conv2d with a delta kernel is the identity") {
  Tape<double> tape(false);
  const auto x = random_tensor(Shape{2, 1, 6, 5}, 3);
  Tensor<double> k(Shape{1, 1, 3, 3});
  k.at(0, 0, 1, 1) = 1.0;
  const auto y = conv2d(tape, cst(x), cst(k), cst(Tensor<double>(Shape{1, 1, 1, 1})));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d of a constant image with an all-ones kernel gives 9v") {
  for (auto mode : {PaddingMode::kReflect}) {
    Tape<double> tape(false);
    const Tensor<double> x(Shape{1, 1, 5, 5}, 0.7);
    const Tensor<double> k(Shape{1, 1, 3, 3}, 1.0);
    const auto y = conv2d(tape, cst(x), cst(k), cst(Tensor<double>(Shape{1, 1, 1, 1})), mode);
    for (double v : y.value().data()) CHECK(v == doctest::Approx(6.3));
  }
}

TEST_CASE("zero padding drops the border contributions") {
  Tape<double> tape(false);
  const Tensor<double> x(Shape{1, 1, 4, 4}, 1.0);
  const Tensor<double> k(Shape{1, 1, 3, 3}, 1.0);
  const auto y = conv2d(tape, cst(x), cst(k), cst(Tensor<double>(Shape{1, 1, 1, 1})),
                        PaddingMode::kZero);
  CHECK(y.value().at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y.value().at(0, 0, 0, 1) == doctest::Approx(6.0));
  CHECK(y.value().at(0, 0, 1, 1) == doctest::Approx(9.0));
}

TEST_CASE("conv2d rejects mismatched channels") {
  Tape<double> tape(false);
  const Tensor<double> x(Shape{1, 2, 4, 4}, 1.0);
  const Tensor<double> k(Shape{1, 1, 3, 3}, 1.0);
  CHECK_THROWS_AS(conv2d(tape, cst(x), cst(k), cst(Tensor<double>(Shape{1, 1, 1, 1}))),
                  ValidationError);
}

TEST_CASE("depthwise convolution keeps channels separate") {
  Tape<double> tape(false);
  Tensor<double> x(Shape{1, 2, 9, 9});
  for (std::size_t i = 0; i < 81; ++i) x[i] = 1.0;  // channel 0 ones, channel 1 zeros
  Tensor<double> k(Shape{2, 1, 7, 7}, 1.0);
  const auto y = depthwise_conv(tape, cst(x), cst(k), cst(Tensor<double>(Shape{1, 2, 1, 1})));
  for (std::size_t i = 0; i < 81; ++i) {
    CHECK(y.value()[i] == doctest::Approx(49.0));
    CHECK(y.value()[81 + i] == 0.0);
  }
}

TEST_CASE("pointwise convolution mixes channels per pixel") {
  Tape<double> tape(false);
  const auto x = random_tensor(Shape{1, 2, 3, 4}, 5);
  Tensor<double> w(Shape{3, 2, 1, 1}, std::vector<double>{1, 0, 0, 1, 1, 1});
  const auto y = pointwise_conv(tape, cst(x), cst(w), cst(Tensor<double>(Shape{1, 3, 1, 1})));
  for (std::size_t p = 0; p < 12; ++p) {
    CHECK(y.value()[p] == doctest::Approx(x[p]));
    CHECK(y.value()[12 + p] == doctest::Approx(x[12 + p]));
    CHECK(y.value()[24 + p] == doctest::Approx(x[p] + x[12 + p]));
  }
}

TEST_CASE("layer norm over channels") {
  Tape<double> tape(false);
  Tensor<double> x(Shape{1, 4, 1, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor<double> g(Shape{1, 4, 1, 1}, 1.0), b(Shape{1, 4, 1, 1}, 0.0);
  const auto y = layer_norm_channels(tape, cst(x), cst(g), cst(b), 1e-12);
  // mean 2.5, population variance 1.25
  const double s = std::sqrt(1.25);
  CHECK(y.value()[0] == doctest::Approx(-1.5 / s));
  CHECK(y.value()[3] == doctest::Approx(1.5 / s));

  const Tensor<double> flat(Shape{1, 4, 1, 1}, 3.0);
  const auto z = layer_norm_channels(tape, cst(flat), cst(g), cst(Tensor<double>(Shape{1, 4, 1, 1}, 0.5)), 1e-6);
  for (double v : z.value().data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("gelu values") {
  Tape<double> tape(false);
  Tensor<double> x(Shape{1, 1, 1, 4}, std::vector<double>{0.0, 10.0, -10.0, 1.0});
  const auto y = gelu(tape, cst(x)).value();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(10.0));
  CHECK(std::abs(y[2]) < 1e-12);
  CHECK(y[3] == doctest::Approx(0.8413447460685429));
}

TEST_CASE("forward differences") {
  Tape<double> tape(false);
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{1, 3, 6});
  const auto d = forward_diff(tape, cst(x), Axis::kHorizontal).value();
  REQUIRE(d.shape() == Shape{1, 1, 1, 2});
  CHECK(d[0] == 2.0);
  CHECK(d[1] == 3.0);
  Tensor<double> col(Shape{1, 1, 3, 1}, std::vector<double>{1, 3, 6});
  const auto dv = forward_diff(tape, cst(col), Axis::kVertical).value();
  REQUIRE(dv.shape() == Shape{1, 1, 2, 1});
  CHECK(dv[1] == 3.0);
}

TEST_CASE("reductions") {
  Tape<double> tape(false);
  Tensor<double> x(Shape{1, 1, 1, 4}, std::vector<double>{0.1, -0.1, 0.2, -0.2});
  CHECK(reduce_var(tape, cst(x)).value().item() == doctest::Approx(0.025));
  CHECK(reduce_mean(tape, cst(x)).value().item() == doctest::Approx(0.0));

  const auto r = random_tensor(Shape{2, 3, 5, 7}, 11);
  double s = 0, s2 = 0;
  for (double v : r.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(r.size());
  CHECK(reduce_sum(tape, cst(r)).value().item() == doctest::Approx(s));
  CHECK(reduce_var(tape, cst(r)).value().item() ==
        doctest::Approx(s2 / n - (s / n) * (s / n)).epsilon(1e-10));
}

TEST_CASE("backward of a mean spreads 1/N") {
  Tape<double> tape;
  auto x = Var<double>::leaf(random_tensor(Shape{1, 1, 4, 5}, 2));
  tape.backward(reduce_mean(tape, x));
  for (double g : x.grad().data()) CHECK(g == doctest::Approx(1.0 / 20));
}

TEST_CASE("backward of mean(x^2) is 2x/N") {
  Tape<double> tape;
  auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 3, 3}, 4));
  tape.backward(reduce_mean(tape, mul(tape, x, x)));
  for (std::size_t i = 0; i < x.value().size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.value()[i] / 18));
  }
}

TEST_CASE("a consumed tape refuses a second backward") {
  Tape<double> tape;
  auto x = Var<double>::leaf(random_tensor(Shape{1, 1, 2, 2}, 4));
  auto loss = reduce_sum(tape, x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ValidationError);
  tape.reset();
  x.zero_grad();
  tape.backward(reduce_sum(tape, x));
  for (double g : x.grad().data()) CHECK(g == 1.0);
}

TEST_CASE("backward needs a scalar loss") {
  Tape<double> tape;
  auto x = Var<double>::leaf(random_tensor(Shape{1, 1, 2, 2}, 4));
  CHECK_THROWS_AS(tape.backward(scale(tape, x, 2.0)), ValidationError);
}

TEST_CASE("convolution is linear in its input") {
  Tape<double> tape(false);
  const auto a = random_tensor(Shape{1, 2, 6, 6}, 7);
  const auto b = random_tensor(Shape{1, 2, 6, 6}, 8);
  const auto k = cst(random_tensor(Shape{3, 2, 3, 3}, 9));
  const auto zero = cst(Tensor<double>(Shape{1, 3, 1, 1}));
  Tensor<double> mix(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2.0 * a[i] - 0.5 * b[i];
  const auto ya = conv2d(tape, cst(a), k, zero).value();
  const auto yb = conv2d(tape, cst(b), k, zero).value();
  const auto ym = conv2d(tape, cst(mix), k, zero).value();
  for (std::size_t i = 0; i < ym.size(); ++i) {
    CHECK(ym[i] == doctest::Approx(2.0 * ya[i] - 0.5 * yb[i]));
  }
}

TEST_CASE("finite-difference gradient suite") {
  GradCheckOptions opt;
  opt.include_network = false;
  const auto cases = run_gradcheck_suite(opt);
  CHECK(cases.size() >= 20);
  for (const auto& c : cases) {
    INFO(c.name << " rel_error " << c.rel_error);
    CHECK(c.passed());
  }
}

TEST_CASE("gradient check agrees on x^2 and flags a wrong rule") {
  const std::vector<Var<double>> leaves{Var<double>::leaf(random_tensor(Shape{1, 1, 3, 3}, 21))};
  const auto x = leaves[0];
  const auto ok = check_gradients(
      "square", [&](Tape<double>& t) { return reduce_sum(t, mul(t, x, x)); }, leaves, 1e-6);
  CHECK(ok.passed());
  // The loss reads a detached copy, so analytic gradients are zero while the
  // numeric ones are not.
  const auto bad = check_gradients(
      "detached",
      [&](Tape<double>& t) {
        auto c = Var<double>::constant(x.value());
        return add(t, reduce_sum(t, mul(t, c, c)), scale(t, reduce_sum(t, x), 0.0));
      },
      leaves, 1e-6);
  CHECK_FALSE(bad.passed());
}
