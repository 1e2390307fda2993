#pragma once

#include <optional>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Convolution weights C_out × C_in × k1 × k2 with an optional per-output bias.
struct FilterBank {
  Tensor weights;
  std::optional<Vector> bias;

  FilterBank() = default;
  explicit FilterBank(Tensor w, std::optional<Vector> b = std::nullopt);

  std::size_t out_channels() const { return weights.shape()[0]; }
  std::size_t in_channels() const { return weights.shape()[1]; }
  std::size_t k1() const { return weights.shape()[2]; }
  std::size_t k2() const { return weights.shape()[3]; }

  /// Filter o as a C_in × k1 × k2 tensor.
  Tensor filter(std::size_t o) const;
};

}  // namespace hyperadapt
