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

#include "sonospeck/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "sonospeck/parallel.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sonospeck {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double mean_patch_variance(const Tensor<float>& r) {
  const Shape s = r.shape();
  const std::size_t per = s.c * s.h * s.w;
  double acc = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* p = r.raw() + n * per;
    double mu = 0.0;
    for (std::size_t i = 0; i < per; ++i) mu += p[i];
    mu /= static_cast<double>(per);
    double v = 0.0;
    for (std::size_t i = 0; i < per; ++i) v += (p[i] - mu) * (p[i] - mu);
    acc += v / static_cast<double>(per);
  }
  return acc / static_cast<double>(s.n);
}

Checkpoint snapshot(const RpnParams<float>& params, const AdamWState<float>& state, int epoch,
                    const LossConfig& loss, const SpeckleSpec& speckle) {
  Checkpoint ck = make_checkpoint(params);
  if (!state.m.empty()) ck.optimizer = state;  // empty before the first step
  ck.epoch = static_cast<std::uint32_t>(epoch);
  ck.loss = loss;
  ck.speckle = speckle;
  return ck;
}

std::vector<Tensor<float>> gather(std::span<const Tensor<float>> corpus,
                                  const std::vector<std::size_t>& idx) {
  std::vector<Tensor<float>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(corpus[i]);
  return out;
}

double nominal_looks_for(std::span<const Tensor<float>> images, const SweepOptions& options) {
  if (options.nominal_looks) return *options.nominal_looks;
  std::vector<double> est;
  for (const auto& img : images) est.push_back(estimate_looks(img, options.mscore.block_size));
  std::sort(est.begin(), est.end());
  const std::size_t m = est.size() / 2;
  return est.size() % 2 ? est[m] : 0.5 * (est[m - 1] + est[m]);
}

SweepRow score_run(std::span<const Tensor<float>> train_set, std::span<const Tensor<float>> held,
                   const TrainConfig& cfg, const LossConfig& loss, const SpeckleSpec& speckle,
                   const MScoreConfig& mcfg, std::uint64_t init_seed) {
  TrainOptions opts;
  opts.init_seed = init_seed;
  TrainResult run = train(train_set, cfg, loss, speckle, opts);
  const std::size_t workers = cfg.deterministic ? 1 : worker_count();
  std::vector<Tensor<float>> denoised = despeckle_all(run.params, held, loss.eps, workers);
  MScoreReport rep = mscore_pooled(held, denoised, mcfg);
  SweepRow row;
  row.sigma2_tgt = speckle.sigma2_tgt;
  row.m_value = rep.m_value;
  row.n_selected = rep.n_blocks_selected;
  return row;
}

std::size_t argmin_row(const std::vector<SweepRow>& rows) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].m_value < rows[best].m_value) best = i;
  }
  return best;
}

/// Shortened runs keep the curriculum's share of the schedule.
TrainConfig sweep_train_config(const TrainConfig& cfg, const SweepOptions& options,
                               LossConfig& loss) {
  if (options.sweep_epochs < 1) throw ValidationError("sweep_epochs: must be >= 1");
  TrainConfig c = cfg;
  c.epochs = options.sweep_epochs;
  c.checkpoint_every = 0;
  if (cfg.epochs > 0 && loss.curriculum_epochs > 0) {
    const double share = static_cast<double>(options.sweep_epochs) / cfg.epochs;
    loss.curriculum_epochs =
        std::max(1, static_cast<int>(std::lround(loss.curriculum_epochs * share)));
  }
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  if (patch_size < 7) throw ValidationError("patch_size: must be >= 7, got " +
                                            std::to_string(patch_size));
  if (batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (epochs < 0) throw ValidationError("epochs: must be >= 0");
  if (!(optim.lr > 0.0)) throw ValidationError("learning_rate: must be > 0");
  if (!(optim.weight_decay >= 0.0)) throw ValidationError("weight_decay: must be >= 0");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ValidationError("adam_beta1: must be in [0, 1)");
  if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ValidationError("adam_beta2: must be in [0, 1)");
  if (!(optim.eps > 0.0)) throw ValidationError("adam_eps: must be > 0");
  if (!(augment_prob >= 0.0 && augment_prob <= 1.0)) {
    throw ValidationError("augment_prob: must be in [0, 1]");
  }
  if (augment_looks.empty()) throw ValidationError("augment_looks: must not be empty");
  for (int l : augment_looks) {
    if (l < 1) throw ValidationError("augment_looks: looks must be >= 1");
  }
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every: must be >= 0");
}

Tensor<float> sample_patches(std::span<const Tensor<float>> corpus, std::size_t n,
                             std::size_t patch_size, Rng& rng, std::vector<PatchOrigin>* origins) {
  if (corpus.empty()) throw ValidationError("sample_patches: empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Shape s = corpus[i].shape();
    if (s.n != 1 || s.c != 1) {
      throw ValidationError("sample_patches: image " + std::to_string(i) +
                            " is not a single grayscale image " + s.str());
    }
    if (s.h < patch_size || s.w < patch_size) {
      throw ValidationError("sample_patches: image " + std::to_string(i) + " " + s.str() +
                            " is smaller than patch_size " + std::to_string(patch_size));
    }
  }
  Tensor<float> out(Shape{n, 1, patch_size, patch_size});
  if (origins) origins->clear();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t img = rng.uniform_index(corpus.size());
    const Shape s = corpus[img].shape();
    const std::size_t top = rng.uniform_index(s.h - patch_size + 1);
    const std::size_t left = rng.uniform_index(s.w - patch_size + 1);
    float* dst = out.plane(k, 0).data();
    for (std::size_t y = 0; y < patch_size; ++y) {
      const float* src = corpus[img].raw() + (top + y) * s.w + left;
      std::copy(src, src + patch_size, dst + y * patch_size);
    }
    if (origins) origins->push_back({img, top, left});
  }
  return out;
}

Tensor<float> augment_speckle(const Tensor<float>& batch, double prob, std::span<const int> looks,
                              std::uint64_t seed, std::uint64_t step,
                              std::vector<int>* applied_looks) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ValidationError("augment_prob: must be in [0, 1]");
  if (looks.empty()) throw ValidationError("augment_looks: must not be empty");
  Tensor<float> out = batch;
  const Shape s = batch.shape();
  const std::size_t per = s.c * s.h * s.w;
  std::vector<float> field(per);
  if (applied_looks) applied_looks->assign(s.n, 0);
  for (std::size_t i = 0; i < s.n; ++i) {
    Rng rng = Rng::stream(seed, 0xa9a0000000000000ULL ^ step, i);
    if (!rng.bernoulli(prob)) continue;
    const int l = looks[rng.uniform_index(looks.size())];
    fill_speckle(field, static_cast<double>(l), rng);
    float* p = out.raw() + i * per;
    for (std::size_t j = 0; j < per; ++j) p[j] *= field[j];
    if (applied_looks) (*applied_looks)[i] = l;
  }
  return out;
}

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << fmt(m.beta) << ',' << fmt(m.l_med) << ',' << fmt(m.l_stat) << ','
     << fmt(m.l_str) << ',' << fmt(m.total) << ',' << fmt(m.var_r) << ',' << fmt(m.val_mscore);
  return os.str();
}

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)once;
#endif
}

TrainResult train(std::span<const Tensor<float>> corpus, const TrainConfig& cfg,
                  const LossConfig& loss, const SpeckleSpec& speckle,
                  const TrainOptions& options) {
  cfg.validate();
  loss.validate();
  if (corpus.empty()) throw ValidationError("train: empty corpus");
  if (!(speckle.sigma2_tgt > 0.0)) throw ValidationError("sigma2_tgt: must be > 0");
  tune_allocator();

  TrainResult result{options.initial ? options.initial->clone()
                                     : build_rpn<float>(options.init_seed),
                     {}, {}, {}};
  RpnParams<float>& params = result.params;
  AdamWState<float>& state = result.optimizer;
  std::vector<Var<float>> vars;
  for (const auto& np : params.named()) vars.push_back(np.var);

  const bool write_files = !options.output_dir.empty();
  std::ofstream metrics;
  if (write_files) {
    std::error_code ec;
    std::filesystem::create_directories(options.output_dir, ec);
    if (ec) throw IoError("cannot create " + options.output_dir.string() + ": " + ec.message());
    metrics.open(options.output_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + (options.output_dir / "metrics.csv").string());
    metrics << kMetricsHeader << '\n' << std::flush;
  }
  if (options.log) options.log(kMetricsHeader);

  const std::size_t steps = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t workers = cfg.deterministic ? 1 : worker_count();
  Rng patch_rng = Rng::stream(cfg.seed, 0x7a7c);
  Checkpoint last_good = snapshot(params, state, 0, loss, speckle);
  const float eps = static_cast<float>(loss.eps);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics row;
    row.epoch = epoch;
    row.beta = beta_schedule(epoch, loss.beta0, loss.curriculum_epochs);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::uint64_t global_step = static_cast<std::uint64_t>(epoch) * steps + s;
      Tensor<float> batch = sample_patches(corpus, cfg.batch_size, cfg.patch_size, patch_rng);
      if (cfg.augment_prob > 0.0) {
        batch = augment_speckle(batch, cfg.augment_prob, cfg.augment_looks, cfg.seed, global_step);
      }
      params.zero_grad();
      try {
        Tape<float> tape;
        DespeckleProducts<float> prod = despeckle(tape, params, batch, eps);
        LossTerms<float> terms = loss_total(tape, prod, batch, loss, speckle.sigma2_tgt, epoch);
        if (!std::isfinite(terms.breakdown.total)) {
          throw NumericalError("non-finite loss");
        }
        tape.backward(terms.total);
        adamw_step(std::span<Var<float>>(vars), state, cfg.optim);
        row.l_med += terms.breakdown.l_med;
        row.l_stat += terms.breakdown.l_stat;
        row.l_str += terms.breakdown.l_str;
        row.total += terms.breakdown.total;
        row.var_r += mean_patch_variance(prod.r.value());
      } catch (const NumericalError& err) {
        std::string where = "training aborted at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(s) + ": " + err.what();
        if (write_files) {
          save_checkpoint(options.output_dir / "last_good.ckpt", last_good);
          where += "; last good checkpoint (epoch " + std::to_string(last_good.epoch) +
                   ") written to " + (options.output_dir / "last_good.ckpt").string();
        }
        throw NumericalError(where);
      }
    }
    const double k = static_cast<double>(steps);
    row.l_med /= k;
    row.l_stat /= k;
    row.l_str /= k;
    row.total /= k;
    row.var_r /= k;
    row.val_mscore = std::numeric_limits<double>::quiet_NaN();
    if (!options.validation.empty()) {
      auto denoised = despeckle_all(params, options.validation, loss.eps, workers);
      row.val_mscore = mscore_pooled(options.validation, denoised, options.mscore).m_value;
    }
    result.history.push_back(row);
    const std::string line = metrics_row(row);
    if (write_files) metrics << line << '\n' << std::flush;
    if (options.log) options.log(line);

    last_good = snapshot(params, state, epoch + 1, loss, speckle);
    if (write_files && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch + 1);
      save_checkpoint(options.output_dir / name, last_good);
    }
    if (options.on_epoch_end) options.on_epoch_end(epoch + 1, params);
  }

  result.checkpoint = snapshot(params, state, cfg.epochs, loss, speckle);
  if (write_files) save_checkpoint(options.output_dir / "final.ckpt", result.checkpoint);
  return result;
}

double residual_variance(const RpnParams<float>& params, std::span<const Tensor<float>> corpus,
                         std::size_t count, std::size_t patch_size, std::uint64_t seed,
                         double eps) {
  if (count == 0) throw ValidationError("residual_variance: count must be >= 1");
  Rng rng = Rng::stream(seed, 0x7e5);
  double acc = 0.0;
  for (std::size_t done = 0; done < count;) {
    const std::size_t n = std::min<std::size_t>(8, count - done);
    Tensor<float> batch = sample_patches(corpus, n, patch_size, rng);
    acc += mean_patch_variance(despeckle_image(params, batch, eps).r) * static_cast<double>(n);
    done += n;
  }
  return acc / static_cast<double>(count);
}

std::vector<Tensor<float>> despeckle_all(const RpnParams<float>& params,
                                         std::span<const Tensor<float>> images, double eps,
                                         std::size_t workers) {
  std::vector<Tensor<float>> out(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    out[i] = despeckle_image(params, images[i], eps).x_hat;
  });
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_corpus(std::size_t size,
                                                                           double val_fraction,
                                                                           std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ValidationError("val_fraction: must be in (0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(size)));
  if (n_val == 0 || n_val >= size) {
    throw ValidationError("val_fraction: a corpus of " + std::to_string(size) +
                          " images gives an empty split");
  }
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, 0x5b1);
  for (std::size_t i = size - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
  std::vector<std::size_t> held(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(held.begin(), held.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {train_idx, held};
}

SweepResult select_target_variance(std::span<const Tensor<float>> corpus, int looks_min,
                                   int looks_max, const TrainConfig& cfg,
                                   const LossConfig& loss, const SweepOptions& options) {
  if (looks_min < 1 || looks_max < looks_min) {
    throw ValidationError("looks range: need 1 <= looks_min <= looks_max");
  }
  auto [train_idx, held_idx] = split_corpus(corpus.size(), options.val_fraction, options.split_seed);
  const auto train_set = gather(corpus, train_idx);
  const auto held = gather(corpus, held_idx);
  LossConfig l = loss;
  const TrainConfig c = sweep_train_config(cfg, options, l);
  MScoreConfig mcfg = options.mscore;
  SweepResult result;
  result.nominal_looks = mcfg.nominal_looks = nominal_looks_for(held, options);
  for (int looks = looks_min; looks <= looks_max; ++looks) {
    SweepRow row = score_run(train_set, held, c, l, SpeckleSpec::from_looks(looks), mcfg,
                             options.init_seed);
    row.value = looks;
    if (options.log) {
      options.log("looks " + std::to_string(looks) + " sigma2_tgt " + fmt(row.sigma2_tgt) +
                  " M " + fmt(row.m_value) + " blocks " + std::to_string(row.n_selected));
    }
    result.rows.push_back(row);
  }
  result.best = argmin_row(result.rows);
  return result;
}

SweepResult sweep_lambda(std::span<const Tensor<float>> corpus, std::span<const double> lambdas,
                         const TrainConfig& cfg, const LossConfig& loss,
                         const SpeckleSpec& speckle, const SweepOptions& options) {
  if (lambdas.empty()) throw ValidationError("lambda grid: must not be empty");
  auto [train_idx, held_idx] = split_corpus(corpus.size(), options.val_fraction, options.split_seed);
  const auto train_set = gather(corpus, train_idx);
  const auto held = gather(corpus, held_idx);
  LossConfig l = loss;
  const TrainConfig c = sweep_train_config(cfg, options, l);
  MScoreConfig mcfg = options.mscore;
  SweepResult result;
  result.nominal_looks = mcfg.nominal_looks = nominal_looks_for(held, options);
  for (double lambda : lambdas) {
    l.lambda = lambda;
    l.validate();
    SweepRow row = score_run(train_set, held, c, l, speckle, mcfg, options.init_seed);
    row.value = lambda;
    if (options.log) {
      options.log("lambda " + fmt(lambda) + " M " + fmt(row.m_value) + " blocks " +
                  std::to_string(row.n_selected));
    }
    result.rows.push_back(row);
  }
  result.best = argmin_row(result.rows);
  return result;
}

std::string variance_sweep_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "looks,sigma2_tgt,m_value,n_selected\n";
  for (const auto& r : result.rows) {
    os << static_cast<int>(r.value) << ',' << fmt(r.sigma2_tgt) << ',' << fmt(r.m_value) << ','
       << r.n_selected << '\n';
  }
  return os.str();
}

std::string lambda_sweep_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "lambda,m_value,n_selected\n";
  for (const auto& r : result.rows) {
    os << fmt(r.value) << ',' << fmt(r.m_value) << ',' << r.n_selected << '\n';
  }
  return os.str();
}

}  // namespace sonospeck
