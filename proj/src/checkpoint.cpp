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

#include "sonospeck/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace sonospeck {
namespace {

struct RawRecord {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint32_t> words;
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void record(const std::string& name, const std::vector<std::uint32_t>& dims,
              const std::vector<std::uint32_t>& words) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) u32(d);
    for (auto w : words) u32(w);
    ++count_;
  }
  std::vector<std::uint8_t> finish() {
    std::vector<std::uint8_t> head(kCheckpointMagic, kCheckpointMagic + 8);
    for (int i = 0; i < 4; ++i) head.push_back(static_cast<std::uint8_t>(count_ >> (8 * i)));
    head.insert(head.end(), out_.begin(), out_.end());
    return head;
  }

 private:
  std::vector<std::uint8_t> out_;
  std::uint32_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::vector<std::uint32_t> float_words(std::span<const float> v) {
  std::vector<std::uint32_t> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::bit_cast<std::uint32_t>(v[i]);
  return w;
}

std::vector<float> words_to_floats(const std::vector<std::uint32_t>& w) {
  std::vector<float> v(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) v[i] = std::bit_cast<float>(w[i]);
  return v;
}

std::vector<std::uint32_t> double_words(std::initializer_list<double> vals) {
  std::vector<std::uint32_t> w;
  for (double d : vals) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    w.push_back(static_cast<std::uint32_t>(bits));
    w.push_back(static_cast<std::uint32_t>(bits >> 32));
  }
  return w;
}

std::vector<double> words_to_doubles(const std::vector<std::uint32_t>& w) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < w.size(); i += 2) {
    out.push_back(std::bit_cast<double>(static_cast<std::uint64_t>(w[i]) |
                                        (static_cast<std::uint64_t>(w[i + 1]) << 32)));
  }
  return out;
}

std::vector<std::uint32_t> dims_of(const Shape& s, const std::vector<std::uint32_t>& declared) {
  if (declared.size() == 1 || declared.size() == 2 || declared.size() == 4) return declared;
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const RawRecord& required(const std::map<std::string, RawRecord>& recs, const std::string& name,
                          std::size_t words) {
  auto it = recs.find(name);
  if (it == recs.end()) throw IoError("checkpoint is missing record '" + name + "'");
  if (it->second.words.size() != words) {
    throw IoError("checkpoint record '" + name + "' has " +
                  std::to_string(it->second.words.size()) + " words, expected " +
                  std::to_string(words));
  }
  return it->second;
}

}  // namespace

Checkpoint make_checkpoint(const RpnParams<float>& params) {
  Checkpoint ckpt;
  for (const auto& p : params.named()) {
    ckpt.params.push_back(CheckpointTensor{
        p.name, dims_of(p.var.shape(), p.dims),
        std::vector<float>(p.var.value().data().begin(), p.var.value().data().end())});
  }
  return ckpt;
}

RpnParams<float> params_from_checkpoint(const Checkpoint& ckpt) {
  RpnParams<float> params = build_rpn<float>(0);
  auto named = params.named();
  if (ckpt.params.size() != named.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                          " parameter tensors, architecture declares " +
                          std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& rec = ckpt.params[i];
    if (rec.name != named[i].name || rec.dims != named[i].dims) {
      throw ValidationError("checkpoint tensor '" + rec.name +
                            "' does not match declared architecture entry '" +
                            named[i].name + "'");
    }
    auto& value = named[i].var.mutable_value();
    if (rec.values.size() != value.size()) {
      throw ValidationError("checkpoint tensor '" + rec.name + "' has wrong element count");
    }
    std::copy(rec.values.begin(), rec.values.end(), value.data().begin());
  }
  return params;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.record("meta.format_version.u32", {1}, {ckpt.format_version});
  w.record("meta.epoch.u32", {1}, {ckpt.epoch});
  const auto& l = ckpt.loss;
  w.record("meta.loss.f64", {14},
           double_words({l.beta0, static_cast<double>(l.curriculum_epochs), l.gamma, l.lambda,
                         l.sigma_edge, static_cast<double>(l.median_window), l.eps}));
  w.record("meta.stat_scope.u32", {1}, {static_cast<std::uint32_t>(l.stat_scope)});
  w.record("meta.speckle.f64", {4}, double_words({ckpt.speckle.looks, ckpt.speckle.sigma2_tgt}));
  for (const auto& p : ckpt.params) {
    if (element_count(p.dims) != p.values.size()) {
      throw ValidationError("checkpoint tensor '" + p.name + "' dims do not match its data");
    }
    w.record(p.name, p.dims, float_words(p.values));
  }
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    if (opt.m.size() != ckpt.params.size() || opt.v.size() != ckpt.params.size()) {
      throw ValidationError("optimizer state does not match parameter list");
    }
    w.record("optim.step.u32", {2},
             {static_cast<std::uint32_t>(opt.step), static_cast<std::uint32_t>(opt.step >> 32)});
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      w.record("optim.m." + ckpt.params[i].name, ckpt.params[i].dims, float_words(opt.m[i].data()));
      w.record("optim.v." + ckpt.params[i].name, ckpt.params[i].dims, float_words(opt.v[i].data()));
    }
  }
  return w.finish();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw IoError("checkpoint truncated: no magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    if (std::memcmp(bytes.data(), kCheckpointMagic, 7) == 0) {
      throw IoError(std::string("unsupported checkpoint version '") +
                    static_cast<char>(bytes[7]) + "' (this build reads version " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    throw IoError("not a checkpoint file (bad magic)");
  }
  Reader r(bytes);
  r.skip(8);
  const std::uint32_t count = r.u32();
  std::map<std::string, RawRecord> recs;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > r.remaining()) throw IoError("checkpoint truncated in record name");
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError("checkpoint record '" + name + "' has bad rank");
    RawRecord rec;
    for (std::uint32_t d = 0; d < rank; ++d) rec.dims.push_back(r.u32());
    const std::size_t n = element_count(rec.dims);
    if (n * 4 > r.remaining()) throw IoError("checkpoint truncated in record '" + name + "'");
    rec.words.resize(n);
    for (auto& wd : rec.words) wd = r.u32();
    if (!recs.emplace(name, std::move(rec)).second) {
      throw IoError("checkpoint has duplicate record '" + name + "'");
    }
    order.push_back(std::move(name));
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");

  Checkpoint ckpt;
  ckpt.format_version = required(recs, "meta.format_version.u32", 1).words[0];
  if (ckpt.format_version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint format_version " + std::to_string(ckpt.format_version));
  }
  ckpt.epoch = required(recs, "meta.epoch.u32", 1).words[0];
  const auto loss = words_to_doubles(required(recs, "meta.loss.f64", 14).words);
  ckpt.loss.beta0 = loss[0];
  ckpt.loss.curriculum_epochs = static_cast<int>(loss[1]);
  ckpt.loss.gamma = loss[2];
  ckpt.loss.lambda = loss[3];
  ckpt.loss.sigma_edge = loss[4];
  ckpt.loss.median_window = static_cast<int>(loss[5]);
  ckpt.loss.eps = loss[6];
  ckpt.loss.stat_scope = required(recs, "meta.stat_scope.u32", 1).words[0] == 0
                             ? StatScope::kPerPatch
                             : StatScope::kPerBatch;
  const auto sp = words_to_doubles(required(recs, "meta.speckle.f64", 4).words);
  ckpt.speckle = SpeckleSpec{sp[0], sp[1]};

  for (const auto& [name, dims] : rpn_layout()) {
    auto it = recs.find(name);
    if (it == recs.end()) throw IoError("checkpoint is missing parameter '" + name + "'");
    ckpt.params.push_back(CheckpointTensor{name, it->second.dims, words_to_floats(it->second.words)});
  }
  if (recs.count("optim.step.u32")) {
    AdamWState<float> opt;
    const auto& st = required(recs, "optim.step.u32", 2).words;
    opt.step = static_cast<std::uint64_t>(st[0]) | (static_cast<std::uint64_t>(st[1]) << 32);
    for (const auto& p : ckpt.params) {
      for (const char* kind : {"optim.m.", "optim.v."}) {
        const auto& rec = required(recs, kind + p.name, p.values.size());
        if (rec.dims != p.dims) throw IoError(std::string("optimizer record dims mismatch for ") + p.name);
        std::vector<std::uint32_t> d4 = rec.dims;
        while (d4.size() < 4) d4.push_back(1);
        Shape s = d4.size() == 1 || p.dims.size() == 1 ? Shape{1, p.dims[0], 1, 1}
                                                        : Shape{d4[0], d4[1], d4[2], d4[3]};
        Tensor<float> t(s, words_to_floats(rec.words));
        (kind[6] == 'm' ? opt.m : opt.v).push_back(std::move(t));
      }
    }
    ckpt.optimizer = std::move(opt);
  }
  for (const auto& name : order) {
    const bool known = name.rfind("meta.", 0) == 0 || name.rfind("optim.", 0) == 0 ||
                       std::any_of(ckpt.params.begin(), ckpt.params.end(),
                                   [&](const CheckpointTensor& p) { return p.name == name; });
    if (!known) throw IoError("checkpoint has unknown record '" + name + "'");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : encode_checkpoint(ckpt)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sonospeck
