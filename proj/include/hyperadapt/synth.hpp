#pragma once

#include <cstdint>
#include <vector>

#include "hyperadapt/data.hpp"
#include "hyperadapt/filter_bank.hpp"

namespace hyperadapt {

struct SynthBankOptions {
  /// Gaussian noise added to each filter, relative to its peak magnitude.
  double noise = 0.0;
  /// Rotate the pattern by a random angle. Rotated patterns are no longer
  /// separable, so the filters stop being exactly CP rank 1.
  bool oriented = false;
};

/// C_out × 3 × k × k bank of Gaussian-windowed sinusoids, each multiplied by a
/// random RGB triple. With default options every filter is exactly rank one
/// (RGB ∘ row profile ∘ column profile).
FilterBank synth_filter_bank(std::size_t out_channels, std::size_t k, std::uint64_t seed,
                             const SynthBankOptions& opts = {});

enum class SignatureShape : std::uint8_t { Smooth, OneHot };

struct SynthTaskOptions {
  std::size_t tile = 12;
  double background_noise = 0.5;
  double amplitude = 1.0;
  SignatureShape signature = SignatureShape::Smooth;
};

struct SynthTask {
  TileSet train;
  TileSet test;
  /// Class spectra, unit peak.
  std::vector<Vector> signatures;
};

/// Classification task where each class owns a spectral signature carried by
/// a Gaussian blob over background noise. `samples` tiles per split, classes
/// balanced. Requires 2 ≤ classes ≤ channels; class spectra are checked to be
/// at least 30° apart.
SynthTask synth_spectral_task(std::size_t channels, std::size_t classes, std::size_t samples, std::uint64_t seed,
                              const SynthTaskOptions& opts = {});

double spectral_angle_degrees(std::span<const double> a, std::span<const double> b);

}  // namespace hyperadapt
