#include "otkt/array2.hpp"

#include <algorithm>
#include <cmath>

#include "otkt/error.hpp"
#include "otkt/simd/kernels.hpp"

namespace otkt {

Array2::Array2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Array2: " + std::to_string(data_.size()) +
                     " values do not fill " + otkt::shape_string(rows, cols));
  }
}

Array2::Array2(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Array2: ragged initializer rows");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Array2 Array2::row_vector(std::span<const double> values) {
  return Array2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Array2 Array2::identity(std::size_t n) {
  Array2 out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::string shape_string(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

std::string Array2::shape_string() const { return otkt::shape_string(rows_, cols_); }

Array2 Array2::transposed() const {
  Array2 out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

bool Array2::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Array2 matmul(const Array2& a, const Array2& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Array2 out(a.rows(), b.cols());
  simd::active().gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

Array2 matmul_nt(const Array2& a, const Array2& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  Array2 out(a.rows(), b.rows());
  simd::active().gemm_nt(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.rows());
  return out;
}

Array2 matmul_tn(const Array2& a, const Array2& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T x " + b.shape_string());
  }
  Array2 out(a.cols(), b.cols());
  simd::active().gemm_tn(a.data(), b.data(), out.data(), a.cols(), a.rows(), b.cols());
  return out;
}

double max_abs_diff(const Array2& a, const Array2& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

}  // namespace otkt
