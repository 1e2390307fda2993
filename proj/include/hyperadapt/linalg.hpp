#pragma once

#include "hyperadapt/matrix.hpp"

namespace hyperadapt {

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Thin singular value decomposition m = U·diag(s)·Vᵀ.
///
/// With k = min(rows, cols), U is rows×k and V is cols×k, both with
/// orthonormal columns (null-space columns are completed), and s holds k
/// non-negative values in non-increasing order.
struct Svd {
  Matrix u;
  Vector s;
  Matrix v;
};

struct SvdOptions {
  int max_sweeps = 80;
};

/// One-sided Jacobi SVD. Throws NumericalError when the sweep cap is hit
/// before all column pairs are orthogonal.
Svd svd(const Matrix& m, const SvdOptions& opts = {});

/// Relative threshold below which singular values are dropped by the
/// pseudo-inverse in lstsq_gram.
inline constexpr double kPinvCutoff = 1e-12;

/// Solves gram·X = rhs in the least-squares sense for symmetric positive
/// semi-definite gram, using the minimum-norm pseudo-inverse solution when
/// gram is singular.
Matrix lstsq_gram(const Matrix& gram, const Matrix& rhs);

/// U[:, :rank]·diag(s[:rank])·V[:, :rank]ᵀ
Matrix svd_truncate(const Svd& d, std::size_t rank);

}  // namespace hyperadapt
