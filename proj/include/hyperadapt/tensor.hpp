#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hyperadapt/matrix.hpp"

namespace hyperadapt {

using Shape = std::vector<std::size_t>;

/// Dense multi-way array of doubles, row-major with the last index fastest.
///
/// Order is at least one and every extent is at least one; the constructors
/// reject anything else with ShapeError.
class Tensor {
 public:
  /// Single zero element of shape [1].
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t mode) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t flat) noexcept { return data_[flat]; }
  double operator[](std::size_t flat) const noexcept { return data_[flat]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  // Unchecked accessors for the orders that dominate the code base.
  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) noexcept {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const noexcept {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& shape);

/// Mode-n unfolding. Columns enumerate the non-mode indices in row-major
/// order of the remaining axes (last remaining axis fastest).
Matrix unfold(const Tensor& t, std::size_t mode);

/// Inverse of unfold for a tensor of the given shape.
Tensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

/// n-mode product: result = fold(m * unfold(t, mode)).
Tensor mode_product(const Tensor& t, const Matrix& m, std::size_t mode);

Tensor outer3(std::span<const double> a, std::span<const double> b, std::span<const double> c);

double frobenius_norm(const Tensor& t);
double frobenius_norm(std::span<const double> values);

/// Column-wise Kronecker product; row index i*J + j holds a(i,r)*b(j,r).
Matrix khatri_rao(const Matrix& a, const Matrix& b);

}  // namespace hyperadapt
