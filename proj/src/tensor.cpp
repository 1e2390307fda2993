#include "hyperadapt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

namespace {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor order must be at least 1");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

// Matrix ---------------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                     std::to_string(rows_ * cols_) + " values, got " + std::to_string(data_.size()));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  if (values.size() != rows_) throw ShapeError("column length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

// Tensor ---------------------------------------------------------------------

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " + std::to_string(shape_product(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::extent(std::size_t mode) const {
  if (mode >= shape_.size()) {
    throw IndexError("mode " + std::to_string(mode) + " out of range for order " + std::to_string(shape_.size()));
  }
  return shape_[mode];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw IndexError("index arity does not match tensor order");
  std::size_t flat = 0, m = 0;
  for (auto i : index) {
    if (i >= shape_[m]) throw IndexError("index out of range on mode " + std::to_string(m));
    flat = flat * shape_[m++] + i;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

// Index algebra ----------------------------------------------------------------

namespace {

// Splits the shape around `mode` into (outer, n, inner) so that a flat index
// decomposes as (a * n + i) * inner + b.
struct ModeSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

ModeSplit split_at(const Shape& shape, std::size_t mode) {
  ModeSplit s;
  for (std::size_t m = 0; m < mode; ++m) s.outer *= shape[m];
  s.n = shape[mode];
  for (std::size_t m = mode + 1; m < shape.size(); ++m) s.inner *= shape[m];
  return s;
}

}  // namespace

// With the (outer, n, inner) split, the row-major enumeration of the non-mode
// axes gives column index a * inner + b.
Matrix unfold(const Tensor& t, std::size_t mode) {
  if (mode >= t.order()) {
    throw IndexError("unfold mode " + std::to_string(mode) + " out of range for order " + std::to_string(t.order()));
  }
  const auto s = split_at(t.shape(), mode);
  Matrix m(s.n, s.outer * s.inner);
  const auto src = t.data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t b = 0; b < s.inner; ++b) m(i, a * s.inner + b) = src[(a * s.n + i) * s.inner + b];
  return m;
}

Tensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
  Tensor t(shape);
  if (mode >= shape.size()) throw IndexError("fold mode out of range");
  const auto s = split_at(shape, mode);
  if (m.rows() != s.n || m.cols() != s.outer * s.inner) throw ShapeError("fold: matrix does not match target shape");
  auto dst = t.data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t b = 0; b < s.inner; ++b) dst[(a * s.n + i) * s.inner + b] = m(i, a * s.inner + b);
  return t;
}

Tensor mode_product(const Tensor& t, const Matrix& m, std::size_t mode) {
  if (mode >= t.order()) throw IndexError("mode_product mode out of range");
  if (m.cols() != t.shape()[mode]) {
    throw ShapeError("mode_product: matrix has " + std::to_string(m.cols()) + " columns, mode extent is " +
                     std::to_string(t.shape()[mode]));
  }
  Shape out_shape = t.shape();
  out_shape[mode] = m.rows();
  Tensor out(out_shape);
  const auto s = split_at(t.shape(), mode);
  const auto src = t.data();
  auto dst = out.data();
  const std::size_t r_count = m.rows();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t r = 0; r < r_count; ++r) {
      double* row = dst.data() + (a * r_count + r) * s.inner;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double w = m(r, i);
        if (w == 0.0) continue;
        const double* in = src.data() + (a * s.n + i) * s.inner;
        for (std::size_t b = 0; b < s.inner; ++b) row[b] += w * in[b];
      }
    }
  return out;
}

Tensor outer3(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  Tensor t({a.size(), b.size(), c.size()});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      for (std::size_t k = 0; k < c.size(); ++k) t(i, j, k) = a[i] * b[j] * c[k];
  return t;
}

double frobenius_norm(std::span<const double> values) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0, ssq = 1.0;
  for (double v : values) {
    if (v == 0.0) continue;
    const double a = std::abs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

double frobenius_norm(const Tensor& t) { return frobenius_norm(t.data()); }

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  }
  const std::size_t rank = a.cols();
  Matrix out(a.rows() * b.rows(), rank);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      for (std::size_t r = 0; r < rank; ++r) out(i * b.rows() + j, r) = a(i, r) * b(j, r);
  return out;
}

}  // namespace hyperadapt
