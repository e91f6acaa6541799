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
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "sonospeck/checkpoint.hpp"
#include "sonospeck/errors.hpp"
#include "sonospeck/rpn.hpp"
#include "sonospeck/speckle.hpp"

using namespace sonospeck;

namespace {

Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(Shape{1, 1, h, w});
  for (auto& v : t.data()) v = static_cast<float>(0.01 + 0.99 * rng.uniform());
  return t;
}

void randomize_head(RpnParams<float>& p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : p.head_weight.mutable_value().data()) v = static_cast<float>(0.05 * rng.normal());
  p.head_bias.mutable_value()[0] = 0.01f;
}

Tensor<float> forward(const RpnParams<float>& p, const Tensor<float>& z) {
  Tape<float> tape(false);
  return rpn_forward(tape, p, Var<float>::constant(z)).value();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sonospeck_test_" + name);
}

}  // namespace

TEST_CASE("parameter count") {
  const auto p = build_rpn<float>(0);
  CHECK(p.parameter_count() == 160417);
  std::size_t from_layout = 0;
  for (const auto& [name, dims] : rpn_layout()) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    from_layout += n;
  }
  CHECK(from_layout == 160417);
  CHECK(864 + 96 + 2 * (4704 + 96 + 96 + 96 + 36864 + 384 + 36864 + 96 + 96) + 864 + 1 == 160417);
  for (const auto& np : p.named()) CHECK(np.var.value().all_finite());
}

TEST_CASE("fresh network outputs zero and despeckles to the identity") {
  const auto p = build_rpn<float>(3);
  const auto y = random_image(64, 64, 1);
  const auto f = forward(p, to_log(y));
  CHECK(f.shape() == y.shape());
  for (float v : f.data()) CHECK(v == 0.0f);

  const auto res = despeckle_image(p, y, 1e-6);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::abs(res.x_hat[i] - y[i]) < 2e-6);
    // r = ln(y + eps) - ln(y + 2 eps) ~ -eps / y, zero up to the eps floor
    CHECK(std::abs(res.r[i]) < 1.5e-6 / y[i] + 2e-6);
  }
}

TEST_CASE("output shape follows the input") {
  auto p = build_rpn<float>(4);
  randomize_head(p, 5);
  CHECK(forward(p, to_log(random_image(160, 160, 2))).shape() == Shape{1, 1, 160, 160});
  CHECK(forward(p, to_log(random_image(20, 33, 2))).shape() == Shape{1, 1, 20, 33});
}

TEST_CASE("exp(r) times x_hat gives back y") {
  auto p = build_rpn<float>(6);
  randomize_head(p, 7);
  const auto y = random_image(32, 32, 8);
  const auto res = despeckle_image(p, y, 1e-6);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::abs(std::exp(res.r[i]) * res.x_hat[i] - y[i]) < 1e-4);
  }
}

TEST_CASE("equal seeds build identical networks") {
  const auto a = build_rpn<float>(11), b = build_rpn<float>(11), c = build_rpn<float>(12);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].var.value() == nb[i].var.value());
    any_diff = any_diff || !(na[i].var.value() == nc[i].var.value());
  }
  CHECK(any_diff);
}

TEST_CASE("MAC accounting") {
  CHECK(rpn_macs_per_pixel() == 158592);
  CHECK(rpn_macs(160, 160) == 158592ull * 25600);
  CHECK(std::abs(static_cast<double>(rpn_macs(160, 160)) / 4.14e9 - 1.0) < 0.05);
  CHECK(rpn_macs(160, 160) == 4 * rpn_macs(80, 80));
}

TEST_CASE("translation covariance away from the borders") {
  auto p = build_rpn<float>(9);
  randomize_head(p, 10);
  const std::size_t n = 48, dy = 3, dx = 2;
  const auto big = to_log(random_image(n + dy, n + dx, 12));
  Tensor<float> a(Shape{1, 1, n, n}), b(Shape{1, 1, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      a.at(0, 0, y, x) = big.at(0, 0, y + dy, x + dx);
      b.at(0, 0, y, x) = big.at(0, 0, y, x);
    }
  }
  const auto fa = forward(p, a), fb = forward(p, b);
  double worst = 0;
  for (std::size_t y = 8; y + 8 < n; ++y) {
    for (std::size_t x = 8; x + 8 < n; ++x) {
      if (y + dy + 8 >= n || x + dx + 8 >= n) continue;
      worst = std::max(worst, double(std::abs(fa.at(0, 0, y, x) - fb.at(0, 0, y + dy, x + dx))));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto p = build_rpn<float>(13);
  randomize_head(p, 14);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, make_checkpoint(p));
  const auto q = params_from_checkpoint(load_checkpoint(path));
  const auto probe = to_log(random_image(24, 24, 15));
  CHECK(forward(p, probe) == forward(q, probe));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint keeps metadata and optimizer state") {
  auto ck = make_checkpoint(build_rpn<float>(1));
  ck.epoch = 17;
  ck.loss.lambda = 0.125;
  ck.speckle = SpeckleSpec::from_looks(9);
  const auto back = decode_checkpoint(encode_checkpoint(ck));
  CHECK(back.epoch == 17);
  CHECK(back.loss.lambda == 0.125);
  CHECK(back.speckle.sigma2_tgt == ck.speckle.sigma2_tgt);
  CHECK(back.params == ck.params);
}

TEST_CASE("corrupted magic is rejected") {
  auto bytes = encode_checkpoint(make_checkpoint(build_rpn<float>(2)));
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), IoError);
  auto truncated = encode_checkpoint(make_checkpoint(build_rpn<float>(2)));
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(truncated), IoError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), IoError);
}

TEST_CASE("checkpoint hash is reproducible") {
  const auto h1 = checkpoint_hash(make_checkpoint(build_rpn<float>(7)));
  const auto h2 = checkpoint_hash(make_checkpoint(build_rpn<float>(7)));
  CHECK(h1 == h2);
  CHECK(h1 != checkpoint_hash(make_checkpoint(build_rpn<float>(8))));
}

TEST_CASE("wire format header") {
  const auto bytes = encode_checkpoint(make_checkpoint(build_rpn<float>(0)));
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "RPNCKPT1");
}
