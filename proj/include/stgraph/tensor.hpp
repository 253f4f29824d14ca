#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stgraph/error.hpp"

namespace stgraph {

/// Dense row-major tensor. Most of the model works on rank-2 matrices; a row
/// vector is a 1 x d matrix.
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;
  using Shape = std::vector<std::size_t>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " holds " +
                       std::to_string(element_count(shape_)) +
                       " values, got " + std::to_string(data_.size()));
    }
  }

  static BasicTensor zeros(std::size_t rows, std::size_t cols) {
    return BasicTensor({rows, cols});
  }

  static BasicTensor filled(std::size_t rows, std::size_t cols, T value) {
    return BasicTensor({rows, cols}, value);
  }

  static BasicTensor identity(std::size_t n) {
    BasicTensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  static BasicTensor scalar(T value) { return BasicTensor({1, 1}, value); }

  /// Matrix from nested row lists; all rows must have equal length.
  static BasicTensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("from_rows: ragged rows");
      values.insert(values.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(values));
  }

  static BasicTensor row(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor({1, n}, std::move(values));
  }

  static BasicTensor column(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor({n, 1}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank2();
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2();
    return shape_[1];
  }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::span<const T> row_span(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<T> row_span(std::size_t r) {
    return std::span<T>(data_).subspan(r * shape_[1], shape_[1]);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Throws NumericError naming `where` when any entry is NaN or infinite.
  const BasicTensor& require_finite(const char* where) const {
    if (!all_finite()) {
      throw NumericError(std::string(where) + ": non-finite value in tensor " +
                         shape_string(shape_));
    }
    return *this;
  }

  std::string shape_string() const { return shape_string(shape_); }

  static std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }

  template <std::floating_point U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  /// Bit-level equality of shape and values.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  void require_rank2() const {
    if (shape_.size() != 2) {
      throw ShapeError("expected a matrix, got tensor " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

/// Largest absolute elementwise difference; shapes must match.
template <std::floating_point T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace stgraph
