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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sonospeck/errors.hpp"

namespace sonospeck {

/// Extent of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool is_scalar() const { return size() == 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

/// Cache-line aligned storage. Vectorised reductions peel leading elements
/// up to the first aligned address, so a fixed base alignment keeps their
/// summation order, and hence results, independent of where malloc lands.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), kAlign);
  }
  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

/// Dense row-major (n, c, h, w) array. Value type; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.size()) {
      throw ValidationError("tensor data length " +
                            std::to_string(data_.size()) +
                            " does not match shape " + shape_.str());
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y,
              std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  /// Contiguous h*w plane of sample n, channel c.
  std::span<T> plane(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan((n * shape_.c + c) * shape_.plane(),
                                       shape_.plane());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(
        (n * shape_.c + c) * shape_.plane(), shape_.plane());
  }

  /// Sample n as a (1, c, h, w) copy.
  Tensor sample(std::size_t n) const {
    Shape s{1, shape_.c, shape_.h, shape_.w};
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * s.size());
    Tensor out(s);
    std::copy(first, first + static_cast<std::ptrdiff_t>(s.size()), out.data_.begin());
    return out;
  }

  T item() const {
    if (data_.size() != 1) {
      throw ValidationError("item() on non-scalar tensor " + shape_.str());
    }
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.raw(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T, AlignedAllocator<T>> data_;
};

/// Stacks equally shaped single-sample tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> samples) {
  if (samples.empty()) throw ValidationError("stack_batch: no samples");
  const Shape one = samples.front().shape();
  Tensor<T> out(Shape{one.n * samples.size(), one.c, one.h, one.w});
  T* dst = out.raw();
  for (const auto& s : samples) {
    if (s.shape() != one) {
      throw ValidationError("stack_batch: shape " + s.shape().str() +
                            " differs from " + one.str());
    }
    dst = std::copy(s.data().begin(), s.data().end(), dst);
  }
  return out;
}

}  // namespace sonospeck
