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

#include "sonospeck/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

#include "sonospeck/errors.hpp"

namespace sonospeck {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

// ---- PGM -----------------------------------------------------------------

struct PnmReader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;
  std::string path;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  unsigned long number() {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(buf[pos])) {
      throw IoError(path + ": malformed PNM header");
    }
    unsigned long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + static_cast<unsigned long>(buf[pos] - '0');
      if (v > 0xffffffffUL) throw IoError(path + ": malformed PNM header");
      ++pos;
    }
    return v;
  }
};

Tensor<float> load_pnm(const std::filesystem::path& path, const std::vector<unsigned char>& buf) {
  if (buf.size() < 2 || buf[0] != 'P') throw IoError(path.string() + ": not a PNM file");
  const char kind = static_cast<char>(buf[1]);
  if (kind == '3' || kind == '6') {
    throw ValidationError(path.string() + ": colour image, grayscale required");
  }
  if (kind != '2' && kind != '5') {
    throw IoError(path.string() + ": unsupported PNM variant P" + std::string(1, kind));
  }
  PnmReader rd{buf, 2, path.string()};
  const unsigned long w = rd.number(), h = rd.number(), maxval = rd.number();
  if (w == 0 || h == 0) throw IoError(path.string() + ": empty image");
  if (maxval == 0 || maxval > 65535) {
    throw ValidationError(path.string() + ": unsupported bit depth (maxval " +
                          std::to_string(maxval) + ")");
  }
  Tensor<float> out(Shape{1, 1, h, w});
  const std::size_t count = static_cast<std::size_t>(w) * h;
  const double scale = 1.0 / static_cast<double>(maxval);
  if (kind == '2') {
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned long v = rd.number();
      if (v > maxval) throw IoError(path.string() + ": sample exceeds maxval");
      out[i] = static_cast<float>(v * scale);
    }
    return out;
  }
  ++rd.pos;  // single whitespace after maxval
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  if (rd.pos + count * bytes > buf.size()) throw IoError(path.string() + ": truncated pixel data");
  const unsigned char* p = buf.data() + rd.pos;
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bytes == 1 ? p[i] : (unsigned{p[2 * i]} << 8) | p[2 * i + 1];
    if (v > maxval) throw IoError(path.string() + ": sample exceeds maxval");
    out[i] = static_cast<float>(v * scale);
  }
  return out;
}

void save_pgm(const std::filesystem::path& path, const std::vector<unsigned>& q, std::size_t h,
              std::size_t w, unsigned maxval) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
  std::vector<unsigned char> bytes;
  bytes.reserve(q.size() * (maxval > 255 ? 2 : 1));
  for (unsigned v : q) {
    if (maxval > 255) bytes.push_back(static_cast<unsigned char>(v >> 8));
    bytes.push_back(static_cast<unsigned char>(v & 0xff));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// ---- PNG -----------------------------------------------------------------

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

Tensor<float> load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  // No C++ objects with destructors may be created between setjmp and the
  // last libpng call below.
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  volatile bool not_gray = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": malformed PNG (" + error + ")");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (color != PNG_COLOR_TYPE_GRAY) {
    not_gray = true;
  } else if (depth == 8 || depth == 16) {
    if (depth == 16) png_set_swap(png);  // low byte first
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  if (not_gray) throw ValidationError(path.string() + ": colour or alpha PNG, grayscale required");
  if (depth != 8 && depth != 16) {
    throw ValidationError(path.string() + ": unsupported bit depth " + std::to_string(depth));
  }
  Tensor<float> out(Shape{1, 1, h, w});
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (depth == 8) {
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<float>(pixels[i] / 255.0);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned v = pixels[2 * i] | (unsigned{pixels[2 * i + 1]} << 8);
      out[i] = static_cast<float>(v / 65535.0);
    }
  }
  return out;
}

void save_png(const std::filesystem::path& path, const std::vector<unsigned>& q, std::size_t h,
              std::size_t w, int bits) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  const std::size_t stride = w * (bits == 16 ? 2 : 1);
  std::vector<unsigned char> pixels(stride * h);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (bits == 16) {
      pixels[2 * i] = static_cast<unsigned char>(q[i] >> 8);  // PNG is big-endian
      pixels[2 * i + 1] = static_cast<unsigned char>(q[i] & 0xff);
    } else {
      pixels[i] = static_cast<unsigned char>(q[i]);
    }
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;

  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG write failed (" + error + ")");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bits,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

bool is_image_path(const std::filesystem::path& path) {
  const std::string e = lower_ext(path);
  return e == ".pgm" || e == ".png";
}

Tensor<float> load_image(const std::filesystem::path& path) {
  if (lower_ext(path) == ".png") return load_png(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return load_pnm(path, buf);
}

void save_image(const std::filesystem::path& path, const Tensor<float>& image, int bits) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 1) {
    throw ValidationError("save_image: expected a [1,1,h,w] tensor, got " + s.str());
  }
  if (bits != 8 && bits != 16) throw ValidationError("save_image: bits must be 8 or 16");
  const unsigned maxval = bits == 16 ? 65535u : 255u;
  std::vector<unsigned> q(image.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = std::isnan(image[i]) ? 0.0 : std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    q[i] = static_cast<unsigned>(std::lround(v * maxval));
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (lower_ext(path) == ".png") {
    save_png(path, q, s.h, s.w, bits);
  } else {
    save_pgm(path, q, s.h, s.w, maxval);
  }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && is_image_path(entry.path())) out.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sonospeck
