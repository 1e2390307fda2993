#include "hyperadapt/filteradapt.hpp"

#include <cmath>
#include <string>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/linalg.hpp"

namespace hyperadapt {

const char* to_string(InitPolicy p) {
  switch (p) {
    case InitPolicy::Interp:
      return "interp";
    case InitPolicy::Replicate:
      return "replicate";
    case InitPolicy::RandomNormal:
      return "random";
  }
  return "?";
}

InitPolicy parse_init_policy(std::string_view name) {
  if (name == "interp") return InitPolicy::Interp;
  if (name == "replicate") return InitPolicy::Replicate;
  if (name == "random" || name == "random-normal") return InitPolicy::RandomNormal;
  throw DataError("unknown init policy '" + std::string(name) + "' (expected interp, replicate or random)");
}

Vector widen_spectral_column(std::span<const double> column, std::size_t channels, InitPolicy policy, Rng& rng) {
  if (channels == 0) throw ShapeError("adapted channel count must be at least 1");
  const std::size_t n0 = column.size();
  Vector out(channels, 0.0);
  const double scale = static_cast<double>(n0) / static_cast<double>(channels);
  switch (policy) {
    case InitPolicy::Interp:
      for (std::size_t j = 0; j < channels; ++j) {
        // Endpoints map onto the first and last source channel.
        const double t = channels == 1 ? 0.5 * static_cast<double>(n0 - 1)
                                       : static_cast<double>(j) * static_cast<double>(n0 - 1) /
                                             static_cast<double>(channels - 1);
        const auto lo = std::min(static_cast<std::size_t>(std::floor(t)), n0 - 1);
        const auto hi = std::min(lo + 1, n0 - 1);
        const double frac = t - static_cast<double>(lo);
        out[j] = scale * ((1.0 - frac) * column[lo] + frac * column[hi]);
      }
      break;
    case InitPolicy::Replicate:
      for (std::size_t j = 0; j < channels; ++j) out[j] = scale * column[j % n0];
      break;
    case InitPolicy::RandomNormal: {
      const double sigma = frobenius_norm(column) / std::sqrt(static_cast<double>(channels));
      if (sigma > 0.0) out = normal_vector(rng, channels, sigma);
      break;
    }
  }
  return out;
}

namespace {

Matrix widen(const Matrix& source, std::size_t channels, InitPolicy policy, Rng& rng) {
  Matrix out(channels, source.cols());
  for (std::size_t r = 0; r < source.cols(); ++r) {
    const auto col = source.column(r);
    out.set_column(r, widen_spectral_column(col, channels, policy, rng));
  }
  return out;
}

}  // namespace

AdaptedLayer adapt(const BankDecomposition& decomps, std::size_t channels, InitPolicy init, std::uint64_t seed) {
  if (channels == 0) throw ShapeError("adapted channel count must be at least 1");
  AdaptedLayer layer;
  layer.kind = decomps.kind;
  layer.channels = channels;
  layer.source_channels = decomps.in_channels;
  layer.k1 = decomps.k1;
  layer.k2 = decomps.k2;
  layer.rank = decomps.rank;
  layer.bias = decomps.bias;
  layer.init = init;
  layer.seed = seed;

  Rng rng(seed);
  for (std::size_t o = 0; o < decomps.filters(); ++o) {
    if (decomps.kind == DecompKind::Cp) {
      const auto& d = decomps.cp[o];
      layer.horizontal.push_back(d.horizontal);
      layer.vertical.push_back(d.vertical);
      layer.spectral.push_back(widen(d.spectral, channels, init, rng));
    } else {
      const auto& d = decomps.tucker[o];
      layer.core.push_back(d.core);
      layer.spectral.push_back(widen(d.spectral, channels, init, rng));
    }
  }
  layer.rank_exceeds_channels = decomps.kind == DecompKind::Tucker && channels < layer.rank;
  return layer;
}

Tensor decompress_filter(const AdaptedLayer& layer, std::size_t o) {
  if (o >= layer.filters()) throw IndexError("filter index out of range");
  if (layer.kind == DecompKind::Cp) return cp_reconstruct(layer.spectral[o], layer.horizontal[o], layer.vertical[o]);
  return tucker1_reconstruct(layer.core[o], layer.spectral[o]);
}

Tensor decompress(const AdaptedLayer& layer) {
  Tensor w({layer.filters(), layer.channels, layer.k1, layer.k2});
  const std::size_t n = layer.channels * layer.k1 * layer.k2;
  for (std::size_t o = 0; o < layer.filters(); ++o) {
    const Tensor f = decompress_filter(layer, o);
    std::copy(f.data().begin(), f.data().end(), w.data().begin() + static_cast<std::ptrdiff_t>(o * n));
  }
  return w;
}

namespace {

// Max over channel slices of ‖s − P s‖ / ‖s‖ where P projects onto the column
// span of `basis` (k1k2 × R).
double max_projection_residual(const Tensor& filter, const Matrix& basis) {
  const std::size_t area = basis.rows();
  const Matrix gram = matmul_tn(basis, basis);
  double worst = 0.0;
  for (std::size_t c = 0; c < filter.shape()[0]; ++c) {
    Matrix slice(area, 1, std::vector<double>(filter.data().begin() + static_cast<std::ptrdiff_t>(c * area),
                                              filter.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * area)));
    const double norm = frobenius_norm(slice.data());
    if (norm == 0.0) continue;
    const Matrix coef = lstsq_gram(gram, matmul_tn(basis, slice));
    const Matrix proj = matmul(basis, coef);
    std::vector<double> diff(area);
    for (std::size_t i = 0; i < area; ++i) diff[i] = slice(i, 0) - proj(i, 0);
    worst = std::max(worst, frobenius_norm(diff) / norm);
  }
  return worst;
}

Matrix cp_span_basis(const AdaptedLayer& layer, std::size_t o) {
  if (layer.kind != DecompKind::Cp) {
    throw UnsupportedKind("spatial_span_residual needs a CP layer; use core_span_residual for Tucker");
  }
  if (o >= layer.filters()) throw IndexError("filter index out of range");
  const auto& h = layer.horizontal[o];
  const auto& v = layer.vertical[o];
  Matrix basis(layer.k1 * layer.k2, layer.rank);
  for (std::size_t r = 0; r < layer.rank; ++r)
    for (std::size_t i = 0; i < layer.k1; ++i)
      for (std::size_t j = 0; j < layer.k2; ++j) basis(i * layer.k2 + j, r) = h(i, r) * v(j, r);
  return basis;
}

Matrix core_span_basis(const AdaptedLayer& layer, std::size_t o) {
  if (layer.kind != DecompKind::Tucker) throw UnsupportedKind("core_span_residual needs a Tucker layer");
  if (o >= layer.filters()) throw IndexError("filter index out of range");
  const std::size_t area = layer.k1 * layer.k2;
  Matrix basis(area, layer.rank);
  const auto& core = layer.core[o];
  for (std::size_t r = 0; r < layer.rank; ++r)
    for (std::size_t i = 0; i < area; ++i) basis(i, r) = core[r * area + i];
  return basis;
}

Tensor filter_of(const Tensor& bank, const AdaptedLayer& layer, std::size_t o) {
  if (bank.order() != 4 || bank.shape()[0] != layer.filters() || bank.shape()[2] != layer.k1 ||
      bank.shape()[3] != layer.k2) {
    throw ShapeError("bank does not match the layer's filter count and kernel size");
  }
  const std::size_t n = bank.size() / bank.shape()[0];
  const auto first = bank.data().begin() + static_cast<std::ptrdiff_t>(o * n);
  return Tensor({bank.shape()[1], layer.k1, layer.k2}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace

double spatial_span_residual(const AdaptedLayer& layer, std::size_t o) {
  const Matrix basis = cp_span_basis(layer, o);
  return max_projection_residual(decompress_filter(layer, o), basis);
}

double spatial_span_residual(const AdaptedLayer& reference, const Tensor& bank, std::size_t o) {
  const Matrix basis = cp_span_basis(reference, o);
  return max_projection_residual(filter_of(bank, reference, o), basis);
}

double core_span_residual(const AdaptedLayer& layer, std::size_t o) {
  const Matrix basis = core_span_basis(layer, o);
  return max_projection_residual(decompress_filter(layer, o), basis);
}

double core_span_residual(const AdaptedLayer& reference, const Tensor& bank, std::size_t o) {
  const Matrix basis = core_span_basis(reference, o);
  return max_projection_residual(filter_of(bank, reference, o), basis);
}

// ADP1 ------------------------------------------------------------------------

Bytes encode_adapted(const AdaptedLayer& layer) {
  BinaryWriter w;
  w.magic("ADP1");
  w.u8(static_cast<std::uint8_t>(layer.kind));
  for (auto v : {layer.filters(), layer.channels, layer.k1, layer.k2, layer.rank, layer.source_channels}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (std::size_t o = 0; o < layer.filters(); ++o) {
    if (layer.kind == DecompKind::Cp) {
      w.f64s(layer.horizontal[o].data());
      w.f64s(layer.vertical[o].data());
    } else {
      w.f64s(layer.core[o].data());
    }
  }
  for (const auto& s : layer.spectral) w.f64s(s.data());
  w.u8(layer.bias ? 1 : 0);
  if (layer.bias) w.f64s(*layer.bias);
  w.u8(static_cast<std::uint8_t>(layer.init));
  w.u64(layer.seed);
  w.u8(layer.rank_exceeds_channels ? 1 : 0);
  return w.take();
}

AdaptedLayer decode_adapted(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  r.expect_magic("ADP1");
  AdaptedLayer layer;
  const auto kind = r.u8();
  if (kind > 1) throw FormatError(context + ": unknown layer kind " + std::to_string(kind));
  layer.kind = static_cast<DecompKind>(kind);
  const std::size_t filters = r.u32();
  layer.channels = r.u32();
  layer.k1 = r.u32();
  layer.k2 = r.u32();
  layer.rank = r.u32();
  layer.source_channels = r.u32();
  if (filters == 0 || layer.channels == 0 || layer.k1 == 0 || layer.k2 == 0 || layer.rank == 0) {
    throw FormatError(context + ": zero dimension in header");
  }
  const std::size_t rank = layer.rank;
  for (std::size_t o = 0; o < filters; ++o) {
    if (layer.kind == DecompKind::Cp) {
      layer.horizontal.emplace_back(layer.k1, rank, r.f64s(layer.k1 * rank));
      layer.vertical.emplace_back(layer.k2, rank, r.f64s(layer.k2 * rank));
    } else {
      layer.core.emplace_back(Shape{rank, layer.k1, layer.k2}, r.f64s(rank * layer.k1 * layer.k2));
    }
  }
  for (std::size_t o = 0; o < filters; ++o) {
    layer.spectral.emplace_back(layer.channels, rank, r.f64s(layer.channels * rank));
  }
  if (r.u8() != 0) layer.bias = r.f64s(filters);
  const auto init = r.u8();
  if (init > 2) throw FormatError(context + ": unknown init policy tag");
  layer.init = static_cast<InitPolicy>(init);
  layer.seed = r.u64();
  layer.rank_exceeds_channels = r.u8() != 0;
  r.expect_end();
  return layer;
}

void save_adapted(const std::filesystem::path& path, const AdaptedLayer& layer) {
  write_file_atomic(path, encode_adapted(layer));
}

AdaptedLayer load_adapted(const std::filesystem::path& path) { return decode_adapted(read_file(path), path.string()); }

}  // namespace hyperadapt
