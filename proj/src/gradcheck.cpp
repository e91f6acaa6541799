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

#include "sonospeck/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonospeck/objective.hpp"
#include "sonospeck/ops.hpp"
#include "sonospeck/rng.hpp"
#include "sonospeck/rpn.hpp"

namespace sonospeck {
namespace {

using V = Var<double>;
using Tn = Tensor<double>;

double evaluate(const LossBuilder& build) {
  Tape<double> tape(false);
  return build(tape).value().item();
}

Tn normal_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tn t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd * rng.normal();
  return t;
}

Tn uniform_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tn t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Normal draws kept at least `gap` away from zero, so abs-type kinks stay
/// far outside the difference stencil.
Tn away_from_zero(Shape s, Rng& rng, double gap) {
  Tn t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.normal();
    while (std::abs(v) < gap) v = rng.normal();
    t[i] = v;
  }
  return t;
}

/// sum(out * w) for a fixed random w, so every output coordinate matters.
V weighted_sum(Tape<double>& tape, const V& out, const Tn& w) {
  return ops::reduce_sum(tape, ops::mul(tape, out, V::constant(w)));
}

struct OpCase {
  std::string name;
  std::function<void(Rng&, std::vector<V>&, LossBuilder&)> setup;
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

/// Random op output weights need the output shape; run once to learn it.
LossBuilder weighted(std::function<V(Tape<double>&)> f, Rng& rng) {
  Tape<double> probe(false);
  const Shape out = f(probe).shape();
  Tn w = normal_tensor(out, rng);
  return [f = std::move(f), w](Tape<double>& tape) { return weighted_sum(tape, f(tape), w); };
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name,
                      std::function<void(Rng&, std::vector<V>&, LossBuilder&)> setup) {
    cases.push_back({std::move(name), std::move(setup)});
  };

  for (PaddingMode mode : {PaddingMode::kReflect, PaddingMode::kZero}) {
    const std::string suffix = mode == PaddingMode::kReflect ? "reflect" : "zero";
    add_case("conv2d_" + suffix, [mode](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
      const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
      const std::size_t k = rng.bernoulli(0.5) ? 3 : 1;
      const std::size_t h = pick(rng, 4, 7), w = pick(rng, 4, 7);
      V x = V::leaf(normal_tensor(Shape{n, ci, h, w}, rng), "x");
      V kern = V::leaf(normal_tensor(Shape{co, ci, k, k}, rng), "kernel");
      V bias = V::leaf(normal_tensor(Shape{1, co, 1, 1}, rng), "bias");
      leaves = {x, kern, bias};
      b = weighted([=](Tape<double>& t) { return ops::conv2d(t, x, kern, bias, mode); }, rng);
    });
    add_case("depthwise_conv7_" + suffix, [mode](Rng& rng, std::vector<V>& leaves,
                                                 LossBuilder& b) {
      const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3);
      const std::size_t h = pick(rng, 4, 9), w = pick(rng, 4, 9);
      V x = V::leaf(normal_tensor(Shape{n, c, h, w}, rng), "x");
      V kern = V::leaf(normal_tensor(Shape{c, 1, 7, 7}, rng, 0.3), "kernel");
      V bias = V::leaf(normal_tensor(Shape{1, c, 1, 1}, rng), "bias");
      leaves = {x, kern, bias};
      b = weighted([=](Tape<double>& t) { return ops::depthwise_conv7(t, x, kern, bias, mode); },
                   rng);
    });
  }
  add_case("depthwise_conv3", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const std::size_t c = pick(rng, 1, 3), h = pick(rng, 3, 7), w = pick(rng, 3, 7);
    V x = V::leaf(normal_tensor(Shape{1, c, h, w}, rng), "x");
    V kern = V::leaf(normal_tensor(Shape{c, 1, 3, 3}, rng), "kernel");
    V bias = V::leaf(normal_tensor(Shape{1, c, 1, 1}, rng), "bias");
    leaves = {x, kern, bias};
    b = weighted([=](Tape<double>& t) { return ops::depthwise_conv(t, x, kern, bias); }, rng);
  });
  add_case("pointwise_conv", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 5), co = pick(rng, 1, 5);
    const std::size_t h = pick(rng, 1, 5), w = pick(rng, 1, 5);
    V x = V::leaf(normal_tensor(Shape{n, ci, h, w}, rng), "x");
    V wt = V::leaf(normal_tensor(Shape{co, ci, 1, 1}, rng), "weight");
    V bias = V::leaf(normal_tensor(Shape{1, co, 1, 1}, rng), "bias");
    leaves = {x, wt, bias};
    b = weighted([=](Tape<double>& t) { return ops::pointwise_conv(t, x, wt, bias); }, rng);
  });
  add_case("layer_norm_channels", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 2, 6);
    const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    V x = V::leaf(normal_tensor(Shape{n, c, h, w}, rng), "x");
    V sc = V::leaf(normal_tensor(Shape{1, c, 1, 1}, rng), "scale");
    V sh = V::leaf(normal_tensor(Shape{1, c, 1, 1}, rng), "shift");
    leaves = {x, sc, sh};
    b = weighted([=](Tape<double>& t) { return ops::layer_norm_channels(t, x, sc, sh, 1e-6); },
                 rng);
  });
  auto unary = [&](std::string name, std::function<V(Tape<double>&, const V&)> op,
                   std::function<Tn(Shape, Rng&)> gen) {
    add_case(std::move(name), [op, gen](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
      const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 2, 6)};
      V x = V::leaf(gen(s, rng), "x");
      leaves = {x};
      b = weighted([=](Tape<double>& t) { return op(t, x); }, rng);
    });
  };
  auto gauss = [](Shape s, Rng& rng) { return normal_tensor(s, rng); };
  auto positive = [](Shape s, Rng& rng) { return uniform_tensor(s, rng, 0.2, 3.0); };
  auto off_zero = [](Shape s, Rng& rng) { return away_from_zero(s, rng, 1e-2); };
  unary("gelu", [](Tape<double>& t, const V& x) { return ops::gelu(t, x); }, gauss);
  unary("scale", [](Tape<double>& t, const V& x) { return ops::scale(t, x, -1.7); }, gauss);
  unary("add_scalar", [](Tape<double>& t, const V& x) { return ops::add_scalar(t, x, 0.3); },
        gauss);
  unary("exp_map", [](Tape<double>& t, const V& x) { return ops::exp_map(t, x); }, gauss);
  unary("log_map", [](Tape<double>& t, const V& x) { return ops::log_map(t, x, 1e-6); },
        positive);
  unary("abs_map", [](Tape<double>& t, const V& x) { return ops::abs_map(t, x); }, off_zero);
  unary("forward_diff_h",
        [](Tape<double>& t, const V& x) { return ops::forward_diff(t, x, Axis::kHorizontal); },
        gauss);
  unary("forward_diff_v",
        [](Tape<double>& t, const V& x) { return ops::forward_diff(t, x, Axis::kVertical); },
        gauss);
  unary("crop", [](Tape<double>& t, const V& x) { return ops::crop(t, x, 1, 0, 1, 2); }, gauss);
  unary("pad_end",
        [](Tape<double>& t, const V& x) {
          return ops::pad_end(t, x, x.shape().h + 1, x.shape().w + 2);
        },
        gauss);
  unary("select_batch", [](Tape<double>& t, const V& x) { return ops::select_batch(t, x, 0); },
        gauss);
  unary("reduce_sum", [](Tape<double>& t, const V& x) { return ops::reduce_sum(t, x); }, gauss);
  unary("reduce_mean", [](Tape<double>& t, const V& x) { return ops::reduce_mean(t, x); }, gauss);
  unary("reduce_var", [](Tape<double>& t, const V& x) { return ops::reduce_var(t, x); }, gauss);

  auto binary = [&](std::string name, std::function<V(Tape<double>&, const V&, const V&)> op,
                    bool off) {
    add_case(std::move(name), [op, off](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
      const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 2, 6)};
      V a = V::leaf(off ? away_from_zero(s, rng, 1e-2) : normal_tensor(s, rng), "a");
      V c = V::leaf(off ? away_from_zero(s, rng, 1e-2) : normal_tensor(s, rng), "b");
      leaves = {a, c};
      b = weighted([=](Tape<double>& t) { return op(t, a, c); }, rng);
    });
  };
  binary("add", [](Tape<double>& t, const V& a, const V& b) { return ops::add(t, a, b); }, false);
  binary("sub", [](Tape<double>& t, const V& a, const V& b) { return ops::sub(t, a, b); }, false);
  binary("mul", [](Tape<double>& t, const V& a, const V& b) { return ops::mul(t, a, b); }, false);
  binary("hypot_map",
         [](Tape<double>& t, const V& a, const V& b) { return ops::hypot_map(t, a, b); }, true);
  add_case("scale_by_channel_vector", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const std::size_t c = pick(rng, 1, 4);
    V x = V::leaf(normal_tensor(Shape{pick(rng, 1, 2), c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng),
                  "x");
    V v = V::leaf(normal_tensor(Shape{1, c, 1, 1}, rng), "v");
    leaves = {x, v};
    b = weighted([=](Tape<double>& t) { return ops::scale_by_channel_vector(t, x, v); }, rng);
  });

  for (StatScope scope : {StatScope::kPerPatch, StatScope::kPerBatch}) {
    add_case("loss_stat_" + to_string(scope), [scope](Rng& rng, std::vector<V>& leaves,
                                                      LossBuilder& b) {
      const Shape s{pick(rng, 1, 3), 1, pick(rng, 3, 6), pick(rng, 3, 6)};
      V r = V::leaf(normal_tensor(s, rng, 0.5), "r");
      leaves = {r};
      const double sigma2 = 0.1 + rng.uniform();
      b = [=](Tape<double>& t) { return loss_stat(t, r, sigma2, scope); };
    });
  }
  add_case("loss_str", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const Shape s{pick(rng, 1, 2), 1, pick(rng, 3, 6), pick(rng, 3, 6)};
    V r = V::leaf(normal_tensor(s, rng, 0.5), "r");
    V x = V::leaf(uniform_tensor(s, rng, 0.1, 1.0), "x_hat");
    leaves = {r, x};
    b = [=](Tape<double>& t) { return loss_str(t, r, x, 0.1); };
  });
  add_case("loss_med", [](Rng& rng, std::vector<V>& leaves, LossBuilder& b) {
    const Shape s{pick(rng, 1, 2), 1, pick(rng, 3, 6), pick(rng, 3, 6)};
    Tn y = uniform_tensor(s, rng, 0.05, 1.0);
    V z_hat = V::leaf(normal_tensor(s, rng), "z_hat");
    leaves = {z_hat};
    b = [=](Tape<double>& t) { return loss_med(t, z_hat, y, 3, 1e-6); };
  });
  return cases;
}

/// Random non-zero head so gradients reach every layer.
RpnParams<double> network_for_check(std::uint64_t seed) {
  RpnParams<double> p = build_rpn<double>(seed);
  Rng rng = Rng::stream(seed, 0x6ead);
  for (std::size_t i = 0; i < p.head_weight.value().size(); ++i)
    p.head_weight.mutable_value()[i] = 0.05 * rng.normal();
  p.head_bias.mutable_value()[0] = 0.01;
  for (auto& blk : p.blocks) {
    for (std::size_t i = 0; i < blk.layer_scale.value().size(); ++i)
      blk.layer_scale.mutable_value()[i] = 0.5 + 0.1 * rng.normal();
  }
  return p;
}

}  // namespace

GradCheckCase check_gradients(const std::string& name, const LossBuilder& build,
                              std::span<const Var<double>> leaves, double tolerance,
                              double step, std::size_t max_coords_per_leaf, std::uint64_t seed) {
  for (const auto& leaf : leaves) leaf.zero_grad();
  {
    Tape<double> tape;
    V loss = build(tape);
    tape.backward(loss);
  }
  Rng rng = Rng::stream(seed, 0x9c);
  GradCheckCase result{name, 0.0, tolerance, 0};
  for (const auto& leaf : leaves) {
    const std::size_t len = leaf.value().size();
    std::vector<std::size_t> coords(len);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_leaf > 0 && len > max_coords_per_leaf) {
      for (std::size_t i = 0; i < max_coords_per_leaf; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_index(len - i)]);
      }
      coords.resize(max_coords_per_leaf);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t idx : coords) {
      double& slot = leaf.mutable_value()[idx];
      const double saved = slot;
      slot = saved + step;
      const double up = evaluate(build);
      slot = saved - step;
      const double down = evaluate(build);
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = leaf.has_grad() ? leaf.grad()[idx] : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    result.coords_checked += coords.size();
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    result.rel_error = std::max(result.rel_error, std::sqrt(diff2) / denom);
  }
  return result;
}

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckOptions& options) {
  std::vector<GradCheckCase> out;
  const auto cases = op_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    GradCheckCase worst{cases[ci].name, 0.0, options.op_tolerance, 0};
    for (int inst = 0; inst < options.instances; ++inst) {
      Rng rng = Rng::stream(options.seed, ci, static_cast<std::uint64_t>(inst));
      std::vector<V> leaves;
      LossBuilder build;
      cases[ci].setup(rng, leaves, build);
      GradCheckCase c = check_gradients(cases[ci].name, build, leaves, options.op_tolerance,
                                        options.step);
      worst.rel_error = std::max(worst.rel_error, c.rel_error);
      worst.coords_checked += c.coords_checked;
    }
    out.push_back(worst);
  }

  if (options.include_network) {
    GradCheckCase net{"rpn_forward", 0.0, options.network_tolerance, 0};
    GradCheckCase obj{"despeckle_loss_total", 0.0, options.network_tolerance, 0};
    for (int inst = 0; inst < options.network_instances; ++inst) {
      const std::uint64_t s = mix64(options.seed + 977 * static_cast<std::uint64_t>(inst));
      RpnParams<double> params = network_for_check(s);
      std::vector<V> leaves;
      for (const auto& np : params.named()) leaves.push_back(np.var);
      Rng rng = Rng::stream(s, 0x17);
      Tn y = uniform_tensor(Shape{2, 1, 8, 9}, rng, 0.05, 1.0);
      V z = V::constant(uniform_tensor(y.shape(), rng, -2.0, 0.0));
      Tn w = normal_tensor(y.shape(), rng);
      LossBuilder forward = [&params, z, w](Tape<double>& t) {
        return weighted_sum(t, rpn_forward(t, params, z), w);
      };
      GradCheckCase c = check_gradients("rpn_forward", forward, leaves,
                                        options.network_tolerance, options.step, 12, s);
      net.rel_error = std::max(net.rel_error, c.rel_error);
      net.coords_checked += c.coords_checked;

      LossConfig cfg;
      LossBuilder objective = [&params, y, cfg](Tape<double>& t) {
        DespeckleProducts<double> prod = despeckle(t, params, y, 1e-6);
        return loss_total(t, prod, y, cfg, 0.2838, 15.0).total;
      };
      c = check_gradients("despeckle_loss_total", objective, leaves, options.network_tolerance,
                          options.step, 12, s + 1);
      obj.rel_error = std::max(obj.rel_error, c.rel_error);
      obj.coords_checked += c.coords_checked;
    }
    out.push_back(net);
    out.push_back(obj);
  }
  return out;
}

}  // namespace sonospeck
