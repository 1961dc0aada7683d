#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "modmap/error.hpp"

namespace modmap::nn {

/// Dense row-major matrix. The scalar is a template parameter so that
/// gradient checks can run the exact same code in double precision.
template <typename T>
class BasicMatrix {
public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionMismatch("matrix data length " + std::to_string(data_.size()) + " != " +
                              std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    return BasicMatrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

/// out = a * b^T, the natural product for (batch x in) * (out x in) weights.
template <typename T>
BasicMatrix<T> matmul_transposed(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols())
    throw DimensionMismatch("a" + shape_string(a.rows(), a.cols()) + " * b^T" +
                            shape_string(b.rows(), b.cols()));
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      T acc{0};
      for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

/// out = a * b.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionMismatch("a" + shape_string(a.rows(), a.cols()) + " * b" +
                            shape_string(b.rows(), b.cols()));
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// acc += a^T * b (accumulating weight gradients).
template <typename T>
void add_transposed_product(BasicMatrix<T>& acc, const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols())
    throw DimensionMismatch("a^T" + shape_string(a.cols(), a.rows()) + " * b" +
                            shape_string(b.rows(), b.cols()) + " into " +
                            shape_string(acc.rows(), acc.cols()));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto arow = a.row(r);
    const auto brow = b.row(r);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const T ai = arow[i];
      if (ai == T{0}) continue;
      auto accrow = acc.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) accrow[j] += ai * brow[j];
    }
  }
}

} // namespace modmap::nn
