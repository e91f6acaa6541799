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

#include "sonospeck/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sonospeck {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const char* expected, const std::string& v) {
  throw ValidationError(key + ": expected " + expected + ", got '" + v + "'");
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, "a finite real", v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, "a real number", v);
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) bad_value(key, "an integer", v);
    return i;
  } catch (const std::logic_error&) {
    bad_value(key, "an integer", v);
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long i = to_int(key, v);
  if (i < 0) bad_value(key, "a non-negative integer", v);
  return static_cast<std::size_t>(i);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad_value(key, "an unsigned integer", v);
  try {
    std::size_t used = 0;
    const unsigned long long i = std::stoull(v, &used);
    if (used != v.size()) bad_value(key, "an unsigned integer", v);
    return i;
  } catch (const std::logic_error&) {
    bad_value(key, "an unsigned integer", v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, "a boolean", v);
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& v, F item) {
  std::vector<T> out;
  std::stringstream ss(v);
  for (std::string part; std::getline(ss, part, ',');) {
    part = trim(part);
    if (!part.empty()) out.push_back(item(part));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += num(xs[i]);
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

struct Entry {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Entry>& schema() {
  static const std::map<std::string, Entry> table = [] {
    std::map<std::string, Entry> t;
    auto real = [&](const char* key, auto member) {
      t[key] = {[member](RunConfig& c, const std::string& k, const std::string& v) {
                  member(c) = to_real(k, v);
                },
                [member](const RunConfig& c) { return num(member(const_cast<RunConfig&>(c))); }};
    };
    auto count = [&](const char* key, auto member) {
      t[key] = {[member](RunConfig& c, const std::string& k, const std::string& v) {
                  member(c) = to_count(k, v);
                },
                [member](const RunConfig& c) {
                  return std::to_string(member(const_cast<RunConfig&>(c)));
                }};
    };
    auto integer = [&](const char* key, auto member) {
      t[key] = {[member](RunConfig& c, const std::string& k, const std::string& v) {
                  const long long i = to_int(k, v);
                  if (i < INT32_MIN || i > INT32_MAX) bad_value(k, "a 32-bit integer", v);
                  member(c) = static_cast<int>(i);
                },
                [member](const RunConfig& c) {
                  return std::to_string(member(const_cast<RunConfig&>(c)));
                }};
    };
    auto u64 = [&](const char* key, auto member) {
      t[key] = {[member](RunConfig& c, const std::string& k, const std::string& v) {
                  member(c) = to_u64(k, v);
                },
                [member](const RunConfig& c) {
                  return std::to_string(member(const_cast<RunConfig&>(c)));
                }};
    };
    auto text = [&](const char* key, auto member) {
      t[key] = {[member](RunConfig& c, const std::string&, const std::string& v) { member(c) = v; },
                [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
    };

    // training
    count("patch_size", [](RunConfig& c) -> auto& { return c.train.patch_size; });
    count("batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    integer("epochs", [](RunConfig& c) -> auto& { return c.train.epochs; });
    real("learning_rate", [](RunConfig& c) -> auto& { return c.train.optim.lr; });
    real("weight_decay", [](RunConfig& c) -> auto& { return c.train.optim.weight_decay; });
    real("adam_beta1", [](RunConfig& c) -> auto& { return c.train.optim.beta1; });
    real("adam_beta2", [](RunConfig& c) -> auto& { return c.train.optim.beta2; });
    real("adam_eps", [](RunConfig& c) -> auto& { return c.train.optim.eps; });
    real("augment_prob", [](RunConfig& c) -> auto& { return c.train.augment_prob; });
    t["augment_looks"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.augment_looks = to_list<int>(v, [&](const std::string& s) {
            return static_cast<int>(to_int(k, s));
          });
        },
        [](const RunConfig& c) { return join(c.train.augment_looks); }};
    u64("seed", [](RunConfig& c) -> auto& { return c.train.seed; });
    u64("init_seed", [](RunConfig& c) -> auto& { return c.init_seed; });
    integer("checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; });
    t["deterministic"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                            c.train.deterministic = to_bool(k, v);
                          },
                          [](const RunConfig& c) {
                            return std::string(c.train.deterministic ? "true" : "false");
                          }};

    // objective
    real("beta0", [](RunConfig& c) -> auto& { return c.loss.beta0; });
    integer("curriculum_epochs", [](RunConfig& c) -> auto& { return c.loss.curriculum_epochs; });
    real("gamma", [](RunConfig& c) -> auto& { return c.loss.gamma; });
    real("lambda", [](RunConfig& c) -> auto& { return c.loss.lambda; });
    real("sigma_edge", [](RunConfig& c) -> auto& { return c.loss.sigma_edge; });
    integer("median_window", [](RunConfig& c) -> auto& { return c.loss.median_window; });
    t["log_eps"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                      c.loss.eps = to_real(k, v);
                      c.mscore.eps = c.loss.eps;
                    },
                    [](const RunConfig& c) { return num(c.loss.eps); }};
    t["stat_scope"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         try {
                           c.loss.stat_scope = parse_stat_scope(v);
                         } catch (const ValidationError&) {
                           bad_value(k, "'patch' or 'batch'", v);
                         }
                       },
                       [](const RunConfig& c) { return to_string(c.loss.stat_scope); }};
    t["target_looks"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                           const double l = to_real(k, v);
                           if (!(l > 0.0)) bad_value(k, "a positive number of looks", v);
                           c.speckle = SpeckleSpec::from_looks(l);
                         },
                         [](const RunConfig& c) { return num(c.speckle.looks); }};
    t["sigma2_tgt"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         const double s = to_real(k, v);
                         if (!(s > 0.0)) bad_value(k, "a positive variance", v);
                         c.speckle = SpeckleSpec::from_variance(s);
                       },
                       [](const RunConfig& c) { return num(c.speckle.sigma2_tgt); }};

    // evaluation
    count("block_size", [](RunConfig& c) -> auto& { return c.mscore.block_size; });
    real("tol_enl", [](RunConfig& c) -> auto& { return c.mscore.tol_enl; });
    real("tol_mu", [](RunConfig& c) -> auto& { return c.mscore.tol_mu; });
    t["nominal_looks"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                            if (v == "auto") {
                              c.nominal_looks.reset();
                              return;
                            }
                            const double l = to_real(k, v);
                            if (!(l > 0.0)) bad_value(k, "'auto' or a positive number", v);
                            c.nominal_looks = l;
                          },
                          [](const RunConfig& c) {
                            return c.nominal_looks ? num(*c.nominal_looks) : std::string("auto");
                          }};

    // paths
    text("corpus_dir", [](RunConfig& c) -> auto& { return c.corpus_dir; });
    text("output_dir", [](RunConfig& c) -> auto& { return c.output_dir; });
    text("checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; });
    text("input_dir", [](RunConfig& c) -> auto& { return c.input_dir; });
    text("noisy_dir", [](RunConfig& c) -> auto& { return c.noisy_dir; });
    text("denoised_dir", [](RunConfig& c) -> auto& { return c.denoised_dir; });
    text("clean_dir", [](RunConfig& c) -> auto& { return c.clean_dir; });

    // simulate
    text("scene", [](RunConfig& c) -> auto& { return c.scene; });
    count("count", [](RunConfig& c) -> auto& { return c.count; });
    count("size", [](RunConfig& c) -> auto& { return c.size; });
    real("contrast", [](RunConfig& c) -> auto& { return c.contrast; });
    real("looks", [](RunConfig& c) -> auto& { return c.looks; });
    real("intensity_scale", [](RunConfig& c) -> auto& { return c.intensity_scale; });
    text("image_format", [](RunConfig& c) -> auto& { return c.image_format; });

    // sweeps
    integer("looks_min", [](RunConfig& c) -> auto& { return c.looks_min; });
    integer("looks_max", [](RunConfig& c) -> auto& { return c.looks_max; });
    real("val_fraction", [](RunConfig& c) -> auto& { return c.val_fraction; });
    integer("sweep_epochs", [](RunConfig& c) -> auto& { return c.sweep_epochs; });
    t["lambda_grid"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                          c.lambda_grid = to_list<double>(
                              v, [&](const std::string& s) { return to_real(k, s); });
                        },
                        [](const RunConfig& c) { return join(c.lambda_grid); }};

    // bench and gradcheck
    count("bench_size", [](RunConfig& c) -> auto& { return c.bench_size; });
    integer("bench_iterations", [](RunConfig& c) -> auto& { return c.bench_iterations; });
    integer("gradcheck_instances", [](RunConfig& c) -> auto& { return c.gradcheck_instances; });
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  loss.validate();
  mscore.validate();
  if (!(speckle.sigma2_tgt > 0.0)) throw ValidationError("sigma2_tgt: must be > 0");
  if (count < 1) throw ValidationError("count: must be >= 1");
  if (size < 32) throw ValidationError("size: must be >= 32");
  if (!(contrast > 1.0 && contrast <= 10.0)) throw ValidationError("contrast: must be in (1, 10]");
  if (!(looks > 0.0)) throw ValidationError("looks: must be > 0");
  if (!(intensity_scale > 0.0 && intensity_scale <= 1.0)) {
    throw ValidationError("intensity_scale: must be in (0, 1]");
  }
  if (image_format != "png" && image_format != "pgm") {
    throw ValidationError("image_format: must be 'png' or 'pgm'");
  }
  (void)parse_scene_kind(scene);
  if (looks_min < 1 || looks_max < looks_min) {
    throw ValidationError("looks_min: need 1 <= looks_min <= looks_max");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ValidationError("val_fraction: must be in (0, 1)");
  }
  if (sweep_epochs < 1) throw ValidationError("sweep_epochs: must be >= 1");
  if (lambda_grid.empty()) throw ValidationError("lambda_grid: must not be empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ValidationError("lambda_grid: weights must be >= 0");
  }
  if (bench_size < 7) throw ValidationError("bench_size: must be >= 7");
  if (bench_iterations < 1) throw ValidationError("bench_iterations: must be >= 1");
  if (gradcheck_instances < 1) throw ValidationError("gradcheck_instances: must be >= 1");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, e] : schema()) keys.push_back(k);
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = schema();
  auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second.set(cfg, key, trim(value));
}

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  if (path.empty()) return parse_config_text("", overrides);
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, e] : schema()) {
    // target_looks and sigma2_tgt describe one quantity; echo the variance,
    // which is exact, and the looks (rounded) as a comment.
    if (k == "target_looks") {
      char looks[32];
      std::snprintf(looks, sizeof looks, "%.10g", cfg.speckle.looks);
      out += std::string("# target_looks = ") + looks + "\n";
      continue;
    }
    out += k + " = " + e.get(cfg) + "\n";
  }
  return out;
}

void require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw ValidationError("missing required path: " + key);
}

}  // namespace sonospeck
