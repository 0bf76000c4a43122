#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace s2n {

/// Raised when operands disagree on shape; the message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rank-3 extent: batch x channels x width.
struct Shape {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t width = 1;

  constexpr std::size_t size() const noexcept { return batch * channels * width; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(batch) + ", " + std::to_string(channels) + ", " +
           std::to_string(width) + ")";
  }
};

/// Dense row-major rank-3 array. Vectors are stored as (1, 1, n).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0, 0, 0} {}
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor vector(std::vector<T> values) {
    const Shape s{1, 1, values.size()};
    return Tensor(s, std::move(values));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return vector(std::vector<T>(values));
  }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t b, std::size_t c, std::size_t w) noexcept {
    return data_[(b * shape_.channels + c) * shape_.width + w];
  }
  const T& operator()(std::size_t b, std::size_t c, std::size_t w) const noexcept {
    return data_[(b * shape_.channels + c) * shape_.width + w];
  }

  T* row(std::size_t b, std::size_t c) noexcept {
    return data_.data() + (b * shape_.channels + c) * shape_.width;
  }
  const T* row(std::size_t b, std::size_t c) const noexcept {
    return data_.data() + (b * shape_.channels + c) * shape_.width;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

/// Serves large tensor buffers from the retained heap rather than fresh mmap
/// regions, which would be page-faulted in again on every training step.
/// Safe to call repeatedly; a no-op outside glibc.
inline void retain_tensor_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace s2n
