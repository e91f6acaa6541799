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

// Command-line front end. Every config key doubles as a --key value flag;
// see `sonospeck <command> --help` and README.md.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sonospeck/checkpoint.hpp"
#include "sonospeck/config.hpp"
#include "sonospeck/evalkit.hpp"
#include "sonospeck/gradcheck.hpp"
#include "sonospeck/image_io.hpp"
#include "sonospeck/parallel.hpp"
#include "sonospeck/training.hpp"

namespace fs = std::filesystem;
using namespace sonospeck;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitIo = 3;

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string grouped(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

/// "--key value" and "--key=value" pairs left over after CLI11 parsing.
std::vector<std::pair<std::string, std::string>> overrides_from(std::vector<std::string> extra) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const std::string& tok = extra[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3) {
      throw ValidationError("unexpected argument '" + tok + "'");
    }
    std::string key = tok.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extra.size()) throw ValidationError(key + ": missing value");
      value = extra[++i];
    }
    for (char& c : key) {
      if (c == '-') c = '_';
    }
    out.emplace_back(key, value);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

/// Echoes the effective configuration to stderr and, if an output directory
/// is set, to <output_dir>/effective_config.txt.
void echo(const RunConfig& cfg, const std::string& command) {
  const std::string text = "# sonospeck " + command + "\n" + echo_config(cfg);
  std::cerr << text;
  if (!cfg.output_dir.empty()) write_text(fs::path(cfg.output_dir) / "effective_config.txt", text);
}

std::vector<Tensor<float>> load_all(const std::vector<fs::path>& paths) {
  std::vector<Tensor<float>> out(paths.size());
  parallel_for(paths.size(), worker_count(), [&](std::size_t i) { out[i] = load_image(paths[i]); });
  return out;
}

std::vector<Tensor<float>> load_dir(const std::string& dir, const char* key) {
  require_path(dir, key);
  auto paths = list_images(dir);
  if (paths.empty()) throw ValidationError(std::string(key) + ": no images in " + dir);
  return load_all(paths);
}

RpnParams<float> load_params(const RunConfig& cfg) {
  require_path(cfg.checkpoint, "checkpoint");
  return params_from_checkpoint(load_checkpoint(cfg.checkpoint));
}

double nominal_for(const RunConfig& cfg, std::span<const Tensor<float>> noisy) {
  if (cfg.nominal_looks) return *cfg.nominal_looks;
  std::vector<double> est;
  for (const auto& img : noisy) est.push_back(estimate_looks(img, cfg.mscore.block_size));
  std::sort(est.begin(), est.end());
  return est[est.size() / 2];
}

// ---- commands --------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg) {
  require_path(cfg.output_dir, "output_dir");
  echo(cfg, "simulate");
  const SceneKind kind = parse_scene_kind(cfg.scene);
  const fs::path root(cfg.output_dir);
  std::vector<std::string> lines(cfg.count);
  parallel_for(cfg.count, worker_count(), [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "img_%04zu", i);
    const std::uint64_t seed = mix64(cfg.train.seed ^ mix64(i + 1));
    SyntheticScene scene = make_scene(kind, cfg.size, cfg.contrast, cfg.looks, seed);
    for (std::size_t k = 0; k < scene.clean.size(); ++k) {
      scene.clean[k] = static_cast<float>(scene.clean[k] * cfg.intensity_scale);
      scene.noisy[k] = static_cast<float>(scene.noisy[k] * cfg.intensity_scale);
    }
    const std::string ext = "." + cfg.image_format;
    const std::string clean = "clean/" + std::string(id) + ext;
    const std::string noisy = "noisy/" + std::string(id) + ext;
    save_image(root / clean, scene.clean);
    save_image(root / noisy, scene.noisy);
    nlohmann::ordered_json rec;
    rec["id"] = id;
    rec["clean_path"] = clean;
    rec["noisy_path"] = noisy;
    rec["looks"] = cfg.looks;
    rec["seed"] = seed;
    rec["scene"] = cfg.scene;
    rec["size"] = cfg.size;
    rec["contrast"] = cfg.contrast;
    rec["intensity_scale"] = cfg.intensity_scale;
    lines[i] = rec.dump();
  });
  std::string manifest;
  for (const auto& l : lines) manifest += l + "\n";
  write_text(root / "manifest.jsonl", manifest);
  std::cout << "wrote " << cfg.count << " clean/noisy pairs and manifest.jsonl to " << root.string()
            << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, bool no_augment) {
  if (no_augment) cfg.train.augment_prob = 0.0;
  require_path(cfg.output_dir, "output_dir");
  echo(cfg, "train");
  const auto corpus = load_dir(cfg.corpus_dir, "corpus_dir");
  TrainOptions opts;
  opts.output_dir = cfg.output_dir;
  opts.init_seed = cfg.init_seed;
  opts.mscore = cfg.mscore;
  if (!cfg.noisy_dir.empty()) {
    opts.validation = load_dir(cfg.noisy_dir, "noisy_dir");
    opts.mscore.nominal_looks = nominal_for(cfg, opts.validation);
  }
  opts.log = [](const std::string& line) { std::cout << line << std::endl; };
  TrainResult res = train(corpus, cfg.train, cfg.loss, cfg.speckle, opts);
  std::cout << "final checkpoint: " << (fs::path(cfg.output_dir) / "final.ckpt").string()
            << " (hash " << std::hex << checkpoint_hash(res.checkpoint) << std::dec << ")\n";
  return 0;
}

int cmd_denoise(const RunConfig& cfg) {
  require_path(cfg.input_dir, "input_dir");
  require_path(cfg.output_dir, "output_dir");
  echo(cfg, "denoise");
  const RpnParams<float> params = load_params(cfg);
  const auto paths = list_images(cfg.input_dir);
  if (paths.empty()) throw ValidationError("input_dir: no images in " + cfg.input_dir);
  std::vector<std::string> rows(paths.size());
  parallel_for(paths.size(), cfg.train.deterministic ? 1 : worker_count(), [&](std::size_t i) {
    const Tensor<float> y = load_image(paths[i]);
    const DespeckleResult out = despeckle_image(params, y, cfg.loss.eps);
    save_image(fs::path(cfg.output_dir) / paths[i].filename(), out.x_hat);
    double mean = 0.0;
    for (std::size_t k = 0; k < out.r.size(); ++k) mean += out.r[k];
    mean /= static_cast<double>(out.r.size());
    double var = 0.0;
    for (std::size_t k = 0; k < out.r.size(); ++k) var += (out.r[k] - mean) * (out.r[k] - mean);
    var /= static_cast<double>(out.r.size());
    rows[i] = paths[i].stem().string() + "," + fmt(mean, "%.8g") + "," + fmt(var, "%.8g") + "," +
              fmt(cfg.speckle.sigma2_tgt, "%.8g");
  });
  std::string csv = "image_id,mean_r,var_r,sigma2_tgt\n";
  for (const auto& r : rows) csv += r + "\n";
  write_text(fs::path(cfg.output_dir) / "r_stats.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
  require_path(cfg.noisy_dir, "noisy_dir");
  require_path(cfg.denoised_dir, "denoised_dir");
  echo(cfg, "evaluate");
  const auto noisy_paths = list_images(cfg.noisy_dir);
  if (noisy_paths.empty()) throw ValidationError("noisy_dir: no images in " + cfg.noisy_dir);
  const bool with_clean = !cfg.clean_dir.empty();
  std::vector<std::string> rows(noisy_paths.size());
  parallel_for(noisy_paths.size(), worker_count(), [&](std::size_t i) {
    const fs::path name = noisy_paths[i].filename();
    const Tensor<float> noisy = load_image(noisy_paths[i]);
    const Tensor<float> denoised = load_image(fs::path(cfg.denoised_dir) / name);
    MScoreConfig m = cfg.mscore;
    m.nominal_looks = cfg.nominal_looks ? *cfg.nominal_looks
                                        : estimate_looks(noisy, cfg.mscore.block_size);
    const MScoreReport rep = mscore(noisy, denoised, m);
    const EpiReport e = epi_report(noisy, denoised);
    std::string row = noisy_paths[i].stem().string() + "," + fmt(rep.m_value) + "," +
                      std::to_string(rep.n_blocks_selected) + "," + fmt(e.epi_hd) + "," +
                      fmt(e.epi_vd);
    if (with_clean) row += "," + fmt(psnr(load_image(fs::path(cfg.clean_dir) / name), denoised));
    rows[i] = row;
  });
  std::string csv = std::string("image_id,m_value,n_selected,epi_hd,epi_vd") +
                    (with_clean ? ",psnr" : "") + "\n";
  for (const auto& r : rows) csv += r + "\n";
  if (!cfg.output_dir.empty()) write_text(fs::path(cfg.output_dir) / "evaluation.csv", csv);
  std::cout << csv;
  return 0;
}

SweepOptions sweep_options(const RunConfig& cfg) {
  SweepOptions o;
  o.val_fraction = cfg.val_fraction;
  o.sweep_epochs = cfg.sweep_epochs;
  o.split_seed = cfg.train.seed;
  o.init_seed = cfg.init_seed;
  o.nominal_looks = cfg.nominal_looks;
  o.mscore = cfg.mscore;
  o.log = [](const std::string& line) { std::cerr << line << std::endl; };
  return o;
}

int cmd_sweep_variance(const RunConfig& cfg) {
  require_path(cfg.output_dir, "output_dir");
  echo(cfg, "sweep-variance");
  const auto corpus = load_dir(cfg.corpus_dir, "corpus_dir");
  const SweepResult res = select_target_variance(corpus, cfg.looks_min, cfg.looks_max, cfg.train,
                                                 cfg.loss, sweep_options(cfg));
  const std::string csv = variance_sweep_csv(res);
  write_text(fs::path(cfg.output_dir) / "variance_sweep.csv", csv);
  std::cout << csv << "selected looks " << res.rows[res.best].value << " (sigma2_tgt "
            << fmt(res.rows[res.best].sigma2_tgt) << ", nominal looks "
            << fmt(res.nominal_looks) << ")\n";
  return 0;
}

int cmd_sweep_lambda(const RunConfig& cfg) {
  require_path(cfg.output_dir, "output_dir");
  echo(cfg, "sweep-lambda");
  const auto corpus = load_dir(cfg.corpus_dir, "corpus_dir");
  const SweepResult res = sweep_lambda(corpus, cfg.lambda_grid, cfg.train, cfg.loss, cfg.speckle,
                                       sweep_options(cfg));
  const std::string csv = lambda_sweep_csv(res);
  write_text(fs::path(cfg.output_dir) / "lambda_sweep.csv", csv);
  std::cout << csv << "selected lambda " << fmt(res.rows[res.best].value) << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  echo(cfg, "gradcheck");
  GradCheckOptions o;
  o.seed = cfg.train.seed + 1;
  o.instances = cfg.gradcheck_instances;
  const auto cases = run_gradcheck_suite(o);
  bool ok = true;
  for (const auto& c : cases) {
    std::printf("%-28s rel_err %.3e  tol %.0e  coords %zu  %s\n", c.name.c_str(), c.rel_error,
                c.tolerance, c.coords_checked, c.passed() ? "ok" : "FAIL");
    ok = ok && c.passed();
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? 0 : kExitRuntime;
}

int cmd_bench(const RunConfig& cfg) {
  echo(cfg, "bench");
  const RpnParams<float> params =
      cfg.checkpoint.empty() ? build_rpn<float>(cfg.init_seed) : load_params(cfg);
  tune_allocator();
  const BenchReport r = bench_throughput(params, cfg.bench_size, cfg.bench_size,
                                         cfg.bench_iterations);
  std::printf("input          %zux%zu\n", r.height, r.width);
  std::printf("iterations     %d (after 3 warmup)\n", r.iterations);
  std::printf("throughput     %.3f images/sec\n", r.images_per_sec);
  std::printf("latency        %.4f s/image\n", r.seconds_per_image);
  std::printf("MACs           %s (%.2f G)\n", grouped(r.macs).c_str(), r.macs / 1e9);
  std::printf("parameters     %s\n", grouped(params.parameter_count()).c_str());
  std::printf("hardware       %s\n", r.hardware.c_str());
  return 0;
}

int cmd_info(const RunConfig& cfg) {
  require_path(cfg.checkpoint, "checkpoint");
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  const RpnParams<float> params = params_from_checkpoint(ck);
  std::printf("checkpoint       %s\n", cfg.checkpoint.c_str());
  std::printf("format version   %u\n", ck.format_version);
  std::printf("epoch            %u\n", ck.epoch);
  std::printf("parameter count  %s\n", grouped(params.parameter_count()).c_str());
  std::printf("MACs at 160x160  %.2f G\n", rpn_macs(160, 160) / 1e9);
  std::printf("speckle          looks %.6g, sigma2_tgt %.6g\n", ck.speckle.looks,
              ck.speckle.sigma2_tgt);
  std::printf("loss             beta0 %g, T %d, gamma %g, lambda %g, sigma_edge %g, "
              "median_window %d, eps %g, stat_scope %s\n",
              ck.loss.beta0, ck.loss.curriculum_epochs, ck.loss.gamma, ck.loss.lambda,
              ck.loss.sigma_edge, ck.loss.median_window, ck.loss.eps,
              to_string(ck.loss.stat_scope).c_str());
  if (ck.optimizer) {
    std::printf("optimizer        AdamW, step %llu\n",
                static_cast<unsigned long long>(ck.optimizer->step));
  } else {
    std::printf("optimizer        none\n");
  }
  std::printf("hash             %016llx\n", static_cast<unsigned long long>(checkpoint_hash(ck)));
  for (const auto& t : ck.params) {
    std::string dims;
    for (std::size_t i = 0; i < t.dims.size(); ++i) dims += (i ? "x" : "") + std::to_string(t.dims[i]);
    std::printf("  %-28s %-12s %zu\n", t.name.c_str(), dims.c_str(), t.values.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised speckle suppression: simulation, training and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string config_path;
  bool no_augment = false;
  std::map<std::string, CLI::App*> subs;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Write synthetic clean/noisy pairs and a manifest"},
      {"train", "Train the despeckler on a corpus of noisy images"},
      {"denoise", "Despeckle a directory of images with a checkpoint"},
      {"evaluate", "M-score, EPI and optional PSNR for denoised images"},
      {"sweep-variance", "Score target variances over a range of looks"},
      {"sweep-lambda", "Score structural-loss weights over a grid"},
      {"gradcheck", "Finite-difference check of every differentiable op"},
      {"bench", "Inference throughput and MAC count"},
      {"info", "Inspect a checkpoint"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->allow_extras();
    sub->footer("Any config key may be given as --key value (e.g. --epochs 10).");
    subs[name] = sub;
  }
  subs["train"]->add_flag("--no-augment", no_augment, "Disable speckle augmentation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const RunConfig cfg = parse_config(config_path, overrides_from(sub->remaining()));
    if (name == "simulate") return cmd_simulate(cfg);
    if (name == "train") return cmd_train(cfg, no_augment);
    if (name == "denoise") return cmd_denoise(cfg);
    if (name == "evaluate") return cmd_evaluate(cfg);
    if (name == "sweep-variance") return cmd_sweep_variance(cfg);
    if (name == "sweep-lambda") return cmd_sweep_lambda(cfg);
    if (name == "gradcheck") return cmd_gradcheck(cfg);
    if (name == "bench") return cmd_bench(cfg);
    if (name == "info") return cmd_info(cfg);
    throw ValidationError("unknown command " + name);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
