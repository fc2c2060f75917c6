#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "glsweep/error.hpp"
#include "glsweep/memory.hpp"

namespace glsweep {

using Buffer = std::vector<double, TrackedAllocator<double>>;

// Column-major strided views. Element (i, j) lives at data[i + j * ld].
struct MatrixView {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;

  double& operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows && j < cols);
    return data[i + j * ld];
  }
  std::span<double> col(std::size_t j) const noexcept { return {data + j * ld, rows}; }
  MatrixView columns(std::size_t first, std::size_t count) const noexcept {
    assert(first + count <= cols);
    return {data + first * ld, rows, count, ld};
  }
};

struct ConstMatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;

  ConstMatrixView() = default;
  ConstMatrixView(const double* d, std::size_t r, std::size_t c, std::size_t l)
      : data(d), rows(r), cols(c), ld(l) {}
  ConstMatrixView(MatrixView v) : data(v.data), rows(v.rows), cols(v.cols), ld(v.ld) {}  // NOLINT

  double operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows && j < cols);
    return data[i + j * ld];
  }
  std::span<const double> col(std::size_t j) const noexcept { return {data + j * ld, rows}; }
  ConstMatrixView columns(std::size_t first, std::size_t count) const noexcept {
    assert(first + count <= cols);
    return {data + first * ld, rows, count, ld};
  }
};

/// Dense column-major matrix whose storage is counted by MemoryTracker.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  // Row-wise literal, handy in tests: Matrix::from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw StructuralError("from_rows: ragged initializer");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix copy_of(ConstMatrixView v) {
    Matrix m(v.rows, v.cols);
    for (std::size_t j = 0; j < v.cols; ++j) std::copy_n(v.data + j * v.ld, v.rows, m.data() + j * v.rows);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i + j * rows_];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i + j * rows_];
  }

  std::span<double> col(std::size_t j) noexcept { return {data() + j * rows_, rows_}; }
  std::span<const double> col(std::size_t j) const noexcept { return {data() + j * rows_, rows_}; }

  MatrixView view() noexcept { return {data(), rows_, cols_, rows_}; }
  ConstMatrixView view() const noexcept { return {data(), rows_, cols_, rows_}; }
  ConstMatrixView cview() const noexcept { return view(); }
  MatrixView columns(std::size_t first, std::size_t count) noexcept { return view().columns(first, count); }
  ConstMatrixView columns(std::size_t first, std::size_t count) const noexcept {
    return view().columns(first, count);
  }

  // Releases storage; the tracker sees the bytes go away immediately.
  void release() noexcept {
    Buffer().swap(data_);
    rows_ = cols_ = 0;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Buffer data_;
};

inline void copy_into(ConstMatrixView src, MatrixView dst) {
  if (src.rows != dst.rows || src.cols != dst.cols) throw StructuralError("copy_into: shape mismatch");
  for (std::size_t j = 0; j < src.cols; ++j) std::copy_n(src.data + j * src.ld, src.rows, dst.data + j * dst.ld);
}

inline double max_abs(ConstMatrixView a) noexcept {
  double m = 0.0;
  for (std::size_t j = 0; j < a.cols; ++j)
    for (std::size_t i = 0; i < a.rows; ++i) m = std::max(m, std::abs(a(i, j)));
  return m;
}

inline double frobenius_norm(ConstMatrixView a) noexcept {
  double s = 0.0;
  for (std::size_t j = 0; j < a.cols; ++j)
    for (std::size_t i = 0; i < a.rows; ++i) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

/// ||a - b||_F / ||b||_F (absolute when b is zero).
inline double relative_frobenius_difference(ConstMatrixView a, ConstMatrixView b) {
  if (a.rows != b.rows || a.cols != b.cols) throw StructuralError("relative difference: shape mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t j = 0; j < a.cols; ++j)
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double d = a(i, j) - b(i, j);
      diff += d * d;
      ref += b(i, j) * b(i, j);
    }
  return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace glsweep
