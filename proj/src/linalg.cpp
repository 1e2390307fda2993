#include "hyperadapt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("hadamard: shapes differ");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

namespace {

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm(const std::vector<double>& x) { return std::sqrt(dot(x, x)); }

// Orthogonalizes v against basis (two passes of modified Gram-Schmidt) and
// returns the remaining norm.
double orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
  }
  return norm(v);
}

// Builds orthonormal columns from the Jacobi-rotated columns. Columns that are
// numerically null (or lost orthogonality) are completed from the standard
// basis.
std::vector<std::vector<double>> orthonormal_columns(const std::vector<std::vector<double>>& cols,
                                                     const std::vector<double>& norms, std::size_t dim) {
  std::vector<std::vector<double>> out;
  out.reserve(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::vector<double> u(dim, 0.0);
    double residual = 0.0;
    if (norms[c] > 0.0) {
      for (std::size_t i = 0; i < dim; ++i) u[i] = cols[c][i] / norms[c];
      residual = orthogonalize(u, out);
    }
    if (residual < 0.5) {
      double best = -1.0;
      std::vector<double> best_v;
      for (std::size_t e = 0; e < dim; ++e) {
        std::vector<double> cand(dim, 0.0);
        cand[e] = 1.0;
        const double r = orthogonalize(cand, out);
        if (r > best) {
          best = r;
          best_v = std::move(cand);
        }
      }
      u = std::move(best_v);
      residual = best;
    }
    for (auto& x : u) x /= residual;
    out.push_back(std::move(u));
  }
  return out;
}

// Hestenes one-sided Jacobi for rows >= cols.
Svd jacobi_tall(const Matrix& m, const SvdOptions& opts) {
  const std::size_t rows = m.rows(), n = m.cols();
  std::vector<std::vector<double>> a(n, std::vector<double>(rows));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < rows; ++r) a[c][r] = m(r, c);
    v[c][c] = 1.0;
  }

  const double eps = std::numeric_limits<double>::epsilon();
  const double tol = eps * static_cast<double>(rows);
  double total = 0.0;
  for (const auto& col : a) total += dot(col, col);
  // Columns at roundoff level relative to the whole matrix carry no direction.
  const double null_level = eps * eps * total;
  bool converged = false;
  int sweep = 0;
  for (; sweep < opts.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(a[p], a[p]);
        const double beta = dot(a[q], a[q]);
        const double gamma = dot(a[p], a[q]);
        if (alpha <= null_level || beta <= null_level) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a[p][i], aq = a[q][i];
          a[p][i] = c * ap - s * aq;
          a[q][i] = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("svd: one-sided Jacobi did not converge after " + std::to_string(sweep) + " sweeps");
  }

  std::vector<double> norms(n);
  for (std::size_t c = 0; c < n; ++c) norms[c] = norm(a[c]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  std::vector<std::vector<double>> sorted_a, sorted_v;
  std::vector<double> sorted_s;
  for (auto idx : order) {
    sorted_a.push_back(a[idx]);
    sorted_v.push_back(v[idx]);
    sorted_s.push_back(norms[idx]);
  }
  const auto u_cols = orthonormal_columns(sorted_a, sorted_s, rows);

  Svd out{Matrix(rows, n), sorted_s, Matrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    out.u.set_column(c, u_cols[c]);
    out.v.set_column(c, sorted_v[c]);
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& m, const SvdOptions& opts) {
  if (m.rows() == 0 || m.cols() == 0) throw ShapeError("svd of an empty matrix");
  if (m.rows() >= m.cols()) return jacobi_tall(m, opts);
  auto t = jacobi_tall(m.transposed(), opts);
  return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

Matrix lstsq_gram(const Matrix& gram, const Matrix& rhs) {
  if (gram.rows() != gram.cols()) throw ShapeError("lstsq_gram: gram must be square");
  if (rhs.rows() != gram.rows()) throw ShapeError("lstsq_gram: rhs row count differs from gram");
  const auto d = svd(gram);
  const std::size_t n = gram.rows();
  Matrix x(n, rhs.cols());
  const double smax = d.s.empty() ? 0.0 : d.s.front();
  if (smax == 0.0) return x;
  // x = V · diag(1/s) · Uᵀ · rhs, truncated at the cutoff.
  const Matrix utb = matmul_tn(d.u, rhs);
  for (std::size_t k = 0; k < d.s.size(); ++k) {
    if (d.s[k] <= kPinvCutoff * smax) break;
    const double inv = 1.0 / d.s[k];
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = d.v(i, k) * inv;
      for (std::size_t j = 0; j < rhs.cols(); ++j) x(i, j) += vik * utb(k, j);
    }
  }
  return x;
}

Matrix svd_truncate(const Svd& d, std::size_t rank) {
  rank = std::min(rank, d.s.size());
  Matrix out(d.u.rows(), d.v.rows());
  for (std::size_t k = 0; k < rank; ++k)
    for (std::size_t i = 0; i < d.u.rows(); ++i) {
      const double us = d.u(i, k) * d.s[k];
      for (std::size_t j = 0; j < d.v.rows(); ++j) out(i, j) += us * d.v(j, k);
    }
  return out;
}

}  // namespace hyperadapt
