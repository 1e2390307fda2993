#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hyperadapt/decomp.hpp"
#include "hyperadapt/random.hpp"

namespace hyperadapt {

/// How the widened spectral components are initialized from the originals.
enum class InitPolicy : std::uint8_t {
  /// Piecewise-linear interpolation of the original channel values across
  /// the new channel positions, scaled by C_in / Ĉ_in.
  Interp = 0,
  /// Original values tiled cyclically, same scaling as Interp.
  Replicate = 1,
  /// N(0, σ²) with σ = ‖original column‖ / sqrt(Ĉ_in).
  RandomNormal = 2,
};

const char* to_string(InitPolicy p);
InitPolicy parse_init_policy(std::string_view name);

/// Widens one spectral column (length C_in) to `channels` entries.
Vector widen_spectral_column(std::span<const double> column, std::size_t channels, InitPolicy policy, Rng& rng);

/// First layer with frozen spatial parts and trainable widened spectral parts.
///
/// CP filters keep their unit-norm horizontal/vertical columns; Tucker filters
/// keep their core. Only `spectral` is ever updated by training.
struct AdaptedLayer {
  DecompKind kind = DecompKind::Cp;
  std::size_t channels = 0;  // Ĉ_in
  std::size_t source_channels = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t rank = 0;

  // Frozen, per filter.
  std::vector<Matrix> horizontal;  // CP: k1 × R
  std::vector<Matrix> vertical;    // CP: k2 × R
  std::vector<Tensor> core;        // Tucker: R × k1 × k2
  std::optional<Vector> bias;

  // Trainable, per filter: Ĉ_in × R.
  std::vector<Matrix> spectral;

  InitPolicy init = InitPolicy::Interp;
  std::uint64_t seed = 0;
  /// Tucker with Ĉ_in < R: the widened component cannot keep orthonormal columns.
  bool rank_exceeds_channels = false;

  std::size_t filters() const { return spectral.size(); }
  std::size_t trainable_count() const { return filters() * channels * rank; }
};

AdaptedLayer adapt(const BankDecomposition& decomps, std::size_t channels, InitPolicy init = InitPolicy::Interp,
                   std::uint64_t seed = 0);

/// Dense C_out × Ĉ_in × k1 × k2 bank with the widened spectral parts substituted.
Tensor decompress(const AdaptedLayer& layer);
Tensor decompress_filter(const AdaptedLayer& layer, std::size_t o);

/// Largest normalized residual, over channels, of projecting each channel
/// slice of filter o onto span{x_r·y_rᵀ}. CP layers only.
double spatial_span_residual(const AdaptedLayer& layer, std::size_t o);
/// Same measure for filter o of an arbitrary C_out × C × k1 × k2 bank, against
/// the spatial span stored in `reference` (e.g. the layer before training).
double spatial_span_residual(const AdaptedLayer& reference, const Tensor& bank, std::size_t o);
/// Tucker counterpart: projection onto span{core[r,:,:]}.
double core_span_residual(const AdaptedLayer& layer, std::size_t o);
double core_span_residual(const AdaptedLayer& reference, const Tensor& bank, std::size_t o);

// ADP1 layout (little-endian):
//   "ADP1", u8 kind, u32 C_out, Ĉ_in, k1, k2, R, u32 source C_in
//   frozen blob:    CP: per filter horizontal k1×R then vertical k2×R
//                   Tucker: per filter core R×k1×k2
//   trainable blob: per filter spectral Ĉ_in×R
//   u8 has_bias, f64 bias[C_out] when set
//   u8 init policy, u64 seed, u8 rank_exceeds_channels
Bytes encode_adapted(const AdaptedLayer& layer);
AdaptedLayer decode_adapted(std::span<const std::uint8_t> bytes, const std::string& context = "ADP1");
void save_adapted(const std::filesystem::path& path, const AdaptedLayer& layer);
AdaptedLayer load_adapted(const std::filesystem::path& path);

}  // namespace hyperadapt
