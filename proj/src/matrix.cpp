// SPDX-License-Identifier: Apache-2.0

#include "bmoe/matrix.hpp"

#include <algorithm>

#include "bmoe/error.hpp"

namespace bmoe {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::column(std::span<const double> values) {
  Matrix m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

std::vector<double> Matrix::col(std::size_t c) const {
  if (c >= cols_) throw DimensionError("column " + std::to_string(c) + " out of range for " + shape_string());
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

double Matrix::item() const {
  if (rows_ != 1 || cols_ != 1) throw DimensionError("expected a 1x1 matrix, got " + shape_string());
  return data_[0];
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw DimensionError("row slice out of range for " + shape_string());
  Matrix out(end - begin, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
  return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw DimensionError("row index out of range for " + shape_string());
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("vstack column mismatch: " + p.shape_string());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += p.rows();
  }
  return out;
}

}  // namespace bmoe
