#include "hyperadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

FilterBank synth_filter_bank(std::size_t out_channels, std::size_t k, std::uint64_t seed,
                             const SynthBankOptions& opts) {
  if (out_channels == 0 || k == 0) throw ShapeError("synthetic bank needs positive filter count and size");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor w({out_channels, 3, k, k});
  Vector bias(out_channels);
  const double center = 0.5 * static_cast<double>(k - 1);
  const double span = std::max(1.0, static_cast<double>(k) / 4.0);

  for (std::size_t o = 0; o < out_channels; ++o) {
    const double sigma_a = span * (0.6 + 0.8 * unit(rng));
    const double sigma_b = span * (0.6 + 0.8 * unit(rng));
    const double freq = (0.1 + 0.25 * unit(rng));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double theta = std::numbers::pi * unit(rng);
    const bool transpose = unit(rng) < 0.5;
    double rgb[3];
    for (auto& c : rgb) c = normal(rng);

    std::vector<double> pattern(k * k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double u = static_cast<double>(i) - center;
        double v = static_cast<double>(j) - center;
        if (opts.oriented) {
          const double ur = u * std::cos(theta) + v * std::sin(theta);
          const double vr = -u * std::sin(theta) + v * std::cos(theta);
          u = ur;
          v = vr;
        } else if (transpose) {
          std::swap(u, v);
        }
        // Separable unless rotated: window(u)·carrier(u) × window(v).
        pattern[i * k + j] = std::exp(-u * u / (2 * sigma_a * sigma_a)) * std::cos(2 * std::numbers::pi * freq * u + phase) *
                             std::exp(-v * v / (2 * sigma_b * sigma_b));
      }
    double peak = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < k * k; ++p) {
        const double val = rgb[c] * pattern[p];
        w[(o * 3 + c) * k * k + p] = val;
        peak = std::max(peak, std::abs(val));
      }
    if (opts.noise > 0.0) {
      for (std::size_t p = 0; p < 3 * k * k; ++p) w[o * 3 * k * k + p] += opts.noise * peak * normal(rng);
    }
    bias[o] = 0.1 * normal(rng);
  }
  return FilterBank(std::move(w), std::move(bias));
}

double spectral_angle_degrees(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 90.0;
  const double cosine = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return std::acos(cosine) * 180.0 / std::numbers::pi;
}

namespace {

std::vector<Vector> make_signatures(std::size_t channels, std::size_t classes, SignatureShape shape) {
  std::vector<Vector> sigs(classes, Vector(channels, 0.0));
  const double spacing = static_cast<double>(channels) / static_cast<double>(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    if (shape == SignatureShape::OneHot) {
      sigs[k][static_cast<std::size_t>(std::floor(static_cast<double>(k) * spacing))] = 1.0;
      continue;
    }
    const double mu = (static_cast<double>(k) + 0.5) * spacing;
    const double sigma = std::max(0.5, spacing / 4.0);
    double peak = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = static_cast<double>(c) + 0.5 - mu;
      sigs[k][c] = std::exp(-d * d / (2 * sigma * sigma));
      peak = std::max(peak, sigs[k][c]);
    }
    for (auto& v : sigs[k]) v /= peak;
  }
  return sigs;
}

TileSet make_split(const std::vector<Vector>& sigs, std::size_t samples, const SynthTaskOptions& opts, Rng& rng,
                   Split split) {
  const std::size_t channels = sigs.front().size();
  const std::size_t classes = sigs.size();
  const std::size_t t = opts.tile;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<int> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  TileSet set;
  set.split = split;
  for (std::size_t i = 0; i < samples; ++i) {
    Tensor tile({channels, t, t});
    for (auto& v : tile.values()) v = opts.background_noise * normal(rng);
    const double cy = static_cast<double>(t) * (0.3 + 0.4 * unit(rng));
    const double cx = static_cast<double>(t) * (0.3 + 0.4 * unit(rng));
    const double radius = static_cast<double>(t) * (0.12 + 0.1 * unit(rng));
    const double amp = opts.amplitude * (0.7 + 0.6 * unit(rng));
    const auto& sig = sigs[static_cast<std::size_t>(labels[i])];
    for (std::size_t y = 0; y < t; ++y)
      for (std::size_t x = 0; x < t; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        const double blob = amp * std::exp(-(dy * dy + dx * dx) / (2 * radius * radius));
        for (std::size_t c = 0; c < channels; ++c) tile(c, y, x) += blob * sig[c];
      }
    set.tiles.push_back(std::move(tile));
  }
  set.labels = std::move(labels);
  return set;
}

}  // namespace

SynthTask synth_spectral_task(std::size_t channels, std::size_t classes, std::size_t samples, std::uint64_t seed,
                              const SynthTaskOptions& opts) {
  if (classes < 2) throw DataError("synthetic task needs at least 2 classes");
  if (classes > channels) throw DataError("synthetic task needs at least as many channels as classes");
  if (opts.tile == 0) throw ShapeError("tile size must be positive");
  SynthTask task;
  task.signatures = make_signatures(channels, classes, opts.signature);
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b) {
      if (spectral_angle_degrees(task.signatures[a], task.signatures[b]) < 30.0) {
        throw DataError("class signatures " + std::to_string(a) + " and " + std::to_string(b) +
                        " are closer than 30 degrees; use more channels");
      }
    }
  Rng train_rng(mix_seed(seed, 1));
  Rng test_rng(mix_seed(seed, 2));
  task.train = make_split(task.signatures, samples, opts, train_rng, Split::Train);
  task.test = make_split(task.signatures, samples, opts, test_rng, Split::Test);
  return task;
}

}  // namespace hyperadapt
