#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/filter_bank.hpp"
#include "hyperadapt/matrix.hpp"
#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

enum class DecompKind : std::uint8_t { Cp = 0, Tucker = 1 };

const char* to_string(DecompKind kind);

struct CpOptions {
  int max_iters = 500;
  /// ALS stops once the fit changes by less than this between sweeps.
  double tol = 1e-9;
  /// Random restarts on top of the deterministic SVD-based start.
  int restarts = 4;
  std::uint64_t seed = 0;
};

/// Rank-R CP model of a C_in × k1 × k2 filter: Σ_r spectral[:,r] ∘ horizontal[:,r] ∘ vertical[:,r].
///
/// Spatial columns (horizontal along k1, vertical along k2) have unit norm;
/// all scale lives in the spectral columns.
struct CpDecomp {
  Matrix spectral;
  Matrix horizontal;
  Matrix vertical;
  double relative_error = 0.0;
  int iterations = 0;
  /// Set when the input was all-zero.
  bool degenerate = false;

  std::size_t rank() const { return spectral.cols(); }
};

/// Result of a single ALS run, with the relative error after every sweep.
struct CpRun {
  CpDecomp decomp;
  std::vector<double> error_trace;
};

/// One alternating-least-squares run from the given spatial starting factors.
CpRun cp_als(const Tensor& filter, Matrix horizontal, Matrix vertical, const CpOptions& opts);

/// Best of one SVD-initialized run and opts.restarts seeded random runs.
CpDecomp cp_decompose(const Tensor& filter, std::size_t rank, const CpOptions& opts = {});

Tensor cp_reconstruct(const Matrix& spectral, const Matrix& horizontal, const Matrix& vertical);
Tensor cp_reconstruct(const CpDecomp& d);

/// Partial Tucker decomposition along the channel mode only:
/// filter ≈ core ×₀ spectral, core R × k1 × k2, spectral C_in × R.
struct Tucker1Decomp {
  Tensor core;
  Matrix spectral;
  double relative_error = 0.0;

  std::size_t rank() const { return spectral.cols(); }
};

/// Truncated SVD of the mode-0 unfolding. Rank is clamped to C_in. A single
/// compressed mode needs no HOOI iterations; the truncated SVD is optimal.
Tucker1Decomp tucker1_decompose(const Tensor& filter, std::size_t rank);

Tensor tucker1_reconstruct(const Tensor& core, const Matrix& spectral);
Tensor tucker1_reconstruct(const Tucker1Decomp& d);

/// ‖ref − approx‖_F / ‖ref‖_F, with 0/0 defined as 0.
double relative_error(const Tensor& ref, const Tensor& approx);

/// Per-filter decompositions of a whole first-layer bank.
struct BankDecomposition {
  DecompKind kind = DecompKind::Cp;
  std::size_t in_channels = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t rank = 0;
  std::vector<CpDecomp> cp;          // filled when kind == Cp
  std::vector<Tucker1Decomp> tucker;  // filled when kind == Tucker
  std::optional<Vector> bias;

  std::size_t filters() const { return kind == DecompKind::Cp ? cp.size() : tucker.size(); }
  std::vector<double> errors() const;
  double mean_error() const;
  std::vector<bool> degenerate() const;
  /// Bank rebuilt from the stored components.
  FilterBank reconstruct() const;
};

BankDecomposition decompose_bank(const FilterBank& bank, DecompKind kind, std::size_t rank,
                                 const CpOptions& opts = {});

// DCP1 layout (all little-endian):
//   "DCP1", u8 kind (0 = CP, 1 = Tucker), u32 C_out, C_in, k1, k2, R
//   per filter, f64 row-major:
//     CP:     spectral C_in×R, horizontal k1×R, vertical k2×R
//     Tucker: spectral C_in×R, core R×k1×k2
//   f64 relative error per filter
//   u8 degenerate flag per filter
//   u8 has_bias, then f64 bias[C_out] when set
Bytes encode_decomposition(const BankDecomposition& d);
BankDecomposition decode_decomposition(std::span<const std::uint8_t> bytes, const std::string& context = "DCP1");
void save_decomposition(const std::filesystem::path& path, const BankDecomposition& d);
BankDecomposition load_decomposition(const std::filesystem::path& path);

}  // namespace hyperadapt
