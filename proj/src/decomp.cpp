#include "hyperadapt/decomp.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/linalg.hpp"
#include "hyperadapt/parallel.hpp"
#include "hyperadapt/random.hpp"

namespace hyperadapt {

FilterBank::FilterBank(Tensor w, std::optional<Vector> b) : weights(std::move(w)), bias(std::move(b)) {
  if (weights.order() != 4) throw ShapeError("filter bank must be order 4 (C_out x C_in x k1 x k2)");
  if (bias && bias->size() != weights.shape()[0]) throw ShapeError("bias length differs from C_out");
}

Tensor FilterBank::filter(std::size_t o) const {
  if (o >= out_channels()) throw IndexError("filter index " + std::to_string(o) + " out of range");
  const std::size_t n = in_channels() * k1() * k2();
  const auto src = weights.data().subspan(o * n, n);
  return Tensor({in_channels(), k1(), k2()}, std::vector<double>(src.begin(), src.end()));
}

const char* to_string(DecompKind kind) { return kind == DecompKind::Cp ? "cp" : "tucker"; }

double relative_error(const Tensor& ref, const Tensor& approx) {
  if (ref.shape() != approx.shape()) throw ShapeError("relative_error: shapes differ");
  std::vector<double> diff(ref.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = ref[i] - approx[i];
  const double num = frobenius_norm(diff);
  const double den = frobenius_norm(ref);
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

// CP ----------------------------------------------------------------------------

Tensor cp_reconstruct(const Matrix& spectral, const Matrix& horizontal, const Matrix& vertical) {
  const std::size_t rank = spectral.cols();
  if (horizontal.cols() != rank || vertical.cols() != rank) throw ShapeError("cp_reconstruct: rank mismatch");
  Tensor t({spectral.rows(), horizontal.rows(), vertical.rows()});
  for (std::size_t r = 0; r < rank; ++r)
    for (std::size_t c = 0; c < spectral.rows(); ++c) {
      const double s = spectral(c, r);
      if (s == 0.0) continue;
      for (std::size_t i = 0; i < horizontal.rows(); ++i) {
        const double si = s * horizontal(i, r);
        for (std::size_t j = 0; j < vertical.rows(); ++j) t(c, i, j) += si * vertical(j, r);
      }
    }
  return t;
}

Tensor cp_reconstruct(const CpDecomp& d) { return cp_reconstruct(d.spectral, d.horizontal, d.vertical); }

namespace {

// Solves for the factor of one mode given the other two: X_(m)·KR · (G)^+.
Matrix als_update(const Matrix& unfolded, const Matrix& first, const Matrix& second) {
  const Matrix kr = khatri_rao(first, second);
  const Matrix gram = hadamard(matmul_tn(first, first), matmul_tn(second, second));
  const Matrix rhs = matmul(unfolded, kr);  // n × R
  return lstsq_gram(gram, rhs.transposed()).transposed();
}

Matrix unit_columns(std::size_t rows, std::size_t rank) {
  Matrix m(rows, rank);
  for (std::size_t r = 0; r < rank; ++r) m(0, r) = 1.0;
  return m;
}

// Moves spatial column scale into the spectral column. Zero spatial columns
// contribute nothing; they are reset to e0 with a zero spectral column.
void normalize_spatial(Matrix& spectral, Matrix& horizontal, Matrix& vertical) {
  for (std::size_t r = 0; r < spectral.cols(); ++r) {
    const double nh = frobenius_norm(horizontal.column(r));
    const double nv = frobenius_norm(vertical.column(r));
    if (nh == 0.0 || nv == 0.0) {
      for (std::size_t i = 0; i < spectral.rows(); ++i) spectral(i, r) = 0.0;
      for (std::size_t i = 0; i < horizontal.rows(); ++i) horizontal(i, r) = i == 0 ? 1.0 : 0.0;
      for (std::size_t i = 0; i < vertical.rows(); ++i) vertical(i, r) = i == 0 ? 1.0 : 0.0;
      continue;
    }
    for (std::size_t i = 0; i < horizontal.rows(); ++i) horizontal(i, r) /= nh;
    for (std::size_t i = 0; i < vertical.rows(); ++i) vertical(i, r) /= nv;
    for (std::size_t i = 0; i < spectral.rows(); ++i) spectral(i, r) *= nh * nv;
  }
}

// Leading left singular vectors of the mode unfolding, padded with random
// columns when the rank exceeds the mode extent.
Matrix svd_start(const Tensor& filter, std::size_t mode, std::size_t rank, Rng& rng) {
  const Matrix unfolded = unfold(filter, mode);
  const auto d = svd(unfolded);
  Matrix out(unfolded.rows(), rank);
  for (std::size_t r = 0; r < rank; ++r) {
    if (r < d.u.cols()) {
      out.set_column(r, d.u.column(r));
    } else {
      out.set_column(r, normal_vector(rng, unfolded.rows()));
    }
  }
  return out;
}

Matrix random_start(std::size_t rows, std::size_t rank, Rng& rng) {
  return Matrix(rows, rank, normal_vector(rng, rows * rank));
}

}  // namespace

CpRun cp_als(const Tensor& filter, Matrix horizontal, Matrix vertical, const CpOptions& opts) {
  if (filter.order() != 3) throw ShapeError("cp_als expects an order-3 filter");
  const std::size_t rank = horizontal.cols();
  if (rank == 0 || vertical.cols() != rank) throw ShapeError("cp_als: starting factors must share a positive rank");
  if (horizontal.rows() != filter.shape()[1] || vertical.rows() != filter.shape()[2]) {
    throw ShapeError("cp_als: starting factors do not match the filter's spatial extents");
  }

  CpRun run;
  auto& d = run.decomp;
  const double norm = frobenius_norm(filter);
  if (norm == 0.0) {
    d.spectral = Matrix(filter.shape()[0], rank);
    d.horizontal = unit_columns(filter.shape()[1], rank);
    d.vertical = unit_columns(filter.shape()[2], rank);
    d.degenerate = true;
    return run;
  }

  const Matrix x0 = unfold(filter, 0);
  const Matrix x1 = unfold(filter, 1);
  const Matrix x2 = unfold(filter, 2);
  Matrix spectral(filter.shape()[0], rank);
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opts.max_iters; ++it) {
    spectral = als_update(x0, horizontal, vertical);
    horizontal = als_update(x1, spectral, vertical);
    vertical = als_update(x2, spectral, horizontal);
    normalize_spatial(spectral, horizontal, vertical);

    const double err = relative_error(filter, cp_reconstruct(spectral, horizontal, vertical));
    run.error_trace.push_back(err);
    d.iterations = it;
    // Fit is 1 - err, so the fit change equals the error change.
    if (std::abs(previous - err) < opts.tol) break;
    previous = err;
  }
  d.spectral = std::move(spectral);
  d.horizontal = std::move(horizontal);
  d.vertical = std::move(vertical);
  d.relative_error = run.error_trace.back();
  return run;
}

CpDecomp cp_decompose(const Tensor& filter, std::size_t rank, const CpOptions& opts) {
  if (filter.order() != 3) throw ShapeError("cp_decompose expects an order-3 filter");
  if (rank == 0) throw ShapeError("cp_decompose: rank must be at least 1");

  Rng rng(mix_seed(opts.seed, 0));
  CpDecomp best = cp_als(filter, svd_start(filter, 1, rank, rng), svd_start(filter, 2, rank, rng), opts).decomp;
  if (best.degenerate) return best;
  for (int restart = 0; restart < opts.restarts; ++restart) {
    Rng restart_rng(mix_seed(opts.seed, static_cast<std::uint64_t>(restart) + 1));
    Matrix h = random_start(filter.shape()[1], rank, restart_rng);
    Matrix v = random_start(filter.shape()[2], rank, restart_rng);
    auto candidate = cp_als(filter, std::move(h), std::move(v), opts).decomp;
    if (candidate.relative_error < best.relative_error) best = std::move(candidate);
  }
  return best;
}

// Tucker ----------------------------------------------------------------------

Tensor tucker1_reconstruct(const Tensor& core, const Matrix& spectral) { return mode_product(core, spectral, 0); }

Tensor tucker1_reconstruct(const Tucker1Decomp& d) { return tucker1_reconstruct(d.core, d.spectral); }

Tucker1Decomp tucker1_decompose(const Tensor& filter, std::size_t rank) {
  if (filter.order() != 3) throw ShapeError("tucker1_decompose expects an order-3 filter");
  if (rank == 0) throw ShapeError("tucker1_decompose: rank must be at least 1");
  rank = std::min(rank, filter.shape()[0]);

  const auto d = svd(unfold(filter, 0));
  Matrix spectral(filter.shape()[0], rank);
  for (std::size_t r = 0; r < rank; ++r) spectral.set_column(r, d.u.column(r));

  Tucker1Decomp out;
  out.core = mode_product(filter, spectral.transposed(), 0);
  out.spectral = std::move(spectral);
  out.relative_error = relative_error(filter, tucker1_reconstruct(out));
  return out;
}

// Banks -----------------------------------------------------------------------

std::vector<double> BankDecomposition::errors() const {
  std::vector<double> out;
  if (kind == DecompKind::Cp) {
    for (const auto& d : cp) out.push_back(d.relative_error);
  } else {
    for (const auto& d : tucker) out.push_back(d.relative_error);
  }
  return out;
}

double BankDecomposition::mean_error() const {
  const auto e = errors();
  return e.empty() ? 0.0 : std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
}

std::vector<bool> BankDecomposition::degenerate() const {
  std::vector<bool> out(filters(), false);
  if (kind == DecompKind::Cp)
    for (std::size_t o = 0; o < cp.size(); ++o) out[o] = cp[o].degenerate;
  return out;
}

FilterBank BankDecomposition::reconstruct() const {
  Tensor w({filters(), in_channels, k1, k2});
  const std::size_t n = in_channels * k1 * k2;
  for (std::size_t o = 0; o < filters(); ++o) {
    const Tensor f = kind == DecompKind::Cp ? cp_reconstruct(cp[o]) : tucker1_reconstruct(tucker[o]);
    std::copy(f.data().begin(), f.data().end(), w.data().begin() + static_cast<std::ptrdiff_t>(o * n));
  }
  return FilterBank(std::move(w), bias);
}

BankDecomposition decompose_bank(const FilterBank& bank, DecompKind kind, std::size_t rank, const CpOptions& opts) {
  if (bank.weights.order() != 4) throw ShapeError("decompose_bank expects an order-4 bank");
  if (rank == 0) throw ShapeError("decompose_bank: rank must be at least 1");
  BankDecomposition out;
  out.kind = kind;
  out.in_channels = bank.in_channels();
  out.k1 = bank.k1();
  out.k2 = bank.k2();
  out.bias = bank.bias;
  const std::size_t n = bank.out_channels();
  if (kind == DecompKind::Cp) {
    out.rank = rank;
    out.cp.resize(n);
    parallel_for(n, [&](std::size_t o) {
      CpOptions filter_opts = opts;
      filter_opts.seed = mix_seed(opts.seed, o);
      out.cp[o] = cp_decompose(bank.filter(o), rank, filter_opts);
    });
  } else {
    out.rank = std::min(rank, bank.in_channels());
    out.tucker.resize(n);
    parallel_for(n, [&](std::size_t o) { out.tucker[o] = tucker1_decompose(bank.filter(o), rank); });
  }
  return out;
}

// DCP1 ------------------------------------------------------------------------

Bytes encode_decomposition(const BankDecomposition& d) {
  BinaryWriter w;
  w.magic("DCP1");
  w.u8(static_cast<std::uint8_t>(d.kind));
  w.u32(static_cast<std::uint32_t>(d.filters()));
  w.u32(static_cast<std::uint32_t>(d.in_channels));
  w.u32(static_cast<std::uint32_t>(d.k1));
  w.u32(static_cast<std::uint32_t>(d.k2));
  w.u32(static_cast<std::uint32_t>(d.rank));
  if (d.kind == DecompKind::Cp) {
    for (const auto& f : d.cp) {
      w.f64s(f.spectral.data());
      w.f64s(f.horizontal.data());
      w.f64s(f.vertical.data());
    }
  } else {
    for (const auto& f : d.tucker) {
      w.f64s(f.spectral.data());
      w.f64s(f.core.data());
    }
  }
  for (double e : d.errors()) w.f64(e);
  for (bool flag : d.degenerate()) w.u8(flag ? 1 : 0);
  w.u8(d.bias ? 1 : 0);
  if (d.bias) w.f64s(*d.bias);
  return w.take();
}

BankDecomposition decode_decomposition(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  r.expect_magic("DCP1");
  BankDecomposition d;
  const auto kind = r.u8();
  if (kind > 1) throw FormatError(context + ": unknown decomposition kind " + std::to_string(kind));
  d.kind = static_cast<DecompKind>(kind);
  const std::size_t filters = r.u32();
  d.in_channels = r.u32();
  d.k1 = r.u32();
  d.k2 = r.u32();
  d.rank = r.u32();
  if (filters == 0 || d.in_channels == 0 || d.k1 == 0 || d.k2 == 0 || d.rank == 0) {
    throw FormatError(context + ": zero dimension in header");
  }
  const std::size_t rank = d.rank;
  for (std::size_t o = 0; o < filters; ++o) {
    if (d.kind == DecompKind::Cp) {
      CpDecomp f;
      f.spectral = Matrix(d.in_channels, rank, r.f64s(d.in_channels * rank));
      f.horizontal = Matrix(d.k1, rank, r.f64s(d.k1 * rank));
      f.vertical = Matrix(d.k2, rank, r.f64s(d.k2 * rank));
      d.cp.push_back(std::move(f));
    } else {
      Tucker1Decomp f;
      f.spectral = Matrix(d.in_channels, rank, r.f64s(d.in_channels * rank));
      f.core = Tensor({rank, d.k1, d.k2}, r.f64s(rank * d.k1 * d.k2));
      d.tucker.push_back(std::move(f));
    }
  }
  for (std::size_t o = 0; o < filters; ++o) {
    const double e = r.f64();
    if (d.kind == DecompKind::Cp) {
      d.cp[o].relative_error = e;
    } else {
      d.tucker[o].relative_error = e;
    }
  }
  for (std::size_t o = 0; o < filters; ++o) {
    const bool flag = r.u8() != 0;
    if (d.kind == DecompKind::Cp) d.cp[o].degenerate = flag;
  }
  if (r.u8() != 0) d.bias = r.f64s(filters);
  r.expect_end();
  return d;
}

void save_decomposition(const std::filesystem::path& path, const BankDecomposition& d) {
  write_file_atomic(path, encode_decomposition(d));
}

BankDecomposition load_decomposition(const std::filesystem::path& path) {
  return decode_decomposition(read_file(path), path.string());
}

}  // namespace hyperadapt
