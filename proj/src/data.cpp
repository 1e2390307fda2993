#include "hyperadapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

std::int32_t HyperCube::label(std::size_t y, std::size_t x) const {
  if (!labels) return -1;
  return (*labels)[y * width() + x];
}

// HSC1 --------------------------------------------------------------------------

Bytes encode_cube(const HyperCube& cube) {
  BinaryWriter w;
  w.magic("HSC1");
  w.u32(static_cast<std::uint32_t>(cube.channels()));
  w.u32(static_cast<std::uint32_t>(cube.height()));
  w.u32(static_cast<std::uint32_t>(cube.width()));
  for (double v : cube.data.data()) w.f32(static_cast<float>(v));
  if (cube.labels) {
    for (auto l : *cube.labels) w.i32(l);
  }
  return w.take();
}

HyperCube decode_cube(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  r.expect_magic("HSC1");
  const std::size_t c = r.u32(), h = r.u32(), w = r.u32();
  if (c == 0 || h == 0 || w == 0) {
    throw FormatError(context + ": extents must be at least 1, got " + std::to_string(c) + "x" + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  const std::size_t count = c * h * w;
  r.require(4 * count);
  std::vector<double> values(count);
  for (auto& v : values) v = r.f32();
  HyperCube cube{Tensor({c, h, w}, std::move(values)), std::nullopt};
  if (r.remaining() == 0) return cube;
  if (r.remaining() != 4 * h * w) {
    throw FormatError(context + ": expected no label plane or " + std::to_string(4 * h * w) + " label bytes, found " +
                      std::to_string(r.remaining()));
  }
  std::vector<std::int32_t> labels(h * w);
  for (auto& l : labels) {
    l = r.i32();
    if (l < -1) throw FormatError(context + ": label below -1");
  }
  cube.labels = std::move(labels);
  return cube;
}

void save_cube(const std::filesystem::path& path, const HyperCube& cube) { write_file_atomic(path, encode_cube(cube)); }

HyperCube load_cube(const std::filesystem::path& path) { return decode_cube(read_file(path), path.string()); }

// TileSet -----------------------------------------------------------------------

const Shape& TileSet::tile_shape() const {
  if (tiles.empty()) throw DataError("empty tile set has no tile shape");
  return tiles.front().shape();
}

int TileSet::num_classes() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

Bytes encode_tiles(const TileSet& set) {
  BinaryWriter w;
  w.magic("TLS1");
  w.u8(static_cast<std::uint8_t>(set.split));
  w.u32(static_cast<std::uint32_t>(set.size()));
  Shape shape = set.empty() ? Shape{0, 0, 0} : set.tile_shape();
  for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
  w.u8(set.stats ? 1 : 0);
  if (set.stats) {
    w.f64s(set.stats->mean);
    w.f64s(set.stats->std);
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.i32(set.labels[i]);
    w.f64s(set.tiles[i].data());
  }
  return w.take();
}

TileSet decode_tiles(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  r.expect_magic("TLS1");
  TileSet set;
  const auto split = r.u8();
  if (split > 2) throw FormatError(context + ": unknown split tag");
  set.split = static_cast<Split>(split);
  const std::size_t count = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
  if (count > 0 && (c == 0 || h == 0 || w == 0)) throw FormatError(context + ": zero tile extent");
  if (r.u8() != 0) set.stats = ChannelStats{r.f64s(c), r.f64s(c)};
  for (std::size_t i = 0; i < count; ++i) {
    set.labels.push_back(r.i32());
    set.tiles.emplace_back(Shape{c, h, w}, r.f64s(c * h * w));
  }
  r.expect_end();
  return set;
}

void save_tiles(const std::filesystem::path& path, const TileSet& set) { write_file_atomic(path, encode_tiles(set)); }

TileSet load_tiles(const std::filesystem::path& path) { return decode_tiles(read_file(path), path.string()); }

// Resampling ----------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.order() != 3) throw ShapeError("resize_bilinear expects C x H x W");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be positive");
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (h == out_h && w == out_w) return image;
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const double top = (1.0 - b.frac) * image(ch, a.lo, b.lo) + b.frac * image(ch, a.lo, b.hi);
        const double bottom = (1.0 - b.frac) * image(ch, a.hi, b.lo) + b.frac * image(ch, a.hi, b.hi);
        out(ch, i, j) = (1.0 - a.frac) * top + a.frac * bottom;
      }
    }
  return out;
}

// Tiling --------------------------------------------------------------------------

std::size_t tile_positions(std::size_t extent, std::size_t tile, std::size_t stride) {
  if (tile == 0 || stride == 0) throw ShapeError("tile and stride must be positive");
  if (extent < tile) return 0;
  return (extent - tile) / stride + 1;
}

TileSet tile_remote_sensing(const HyperCube& cube, std::size_t tile, std::size_t stride, std::size_t resize_to) {
  if (cube.height() < tile || cube.width() < tile) throw ShapeError("cube smaller than the tile size");
  const std::size_t ny = tile_positions(cube.height(), tile, stride);
  const std::size_t nx = tile_positions(cube.width(), tile, stride);
  const std::size_t c = cube.channels();
  TileSet set;
  for (std::size_t ty = 0; ty < ny; ++ty)
    for (std::size_t tx = 0; tx < nx; ++tx) {
      const std::size_t y0 = ty * stride, x0 = tx * stride;
      const auto label = cube.label(y0 + tile / 2, x0 + tile / 2);
      if (label < 0) continue;
      Tensor patch({c, tile, tile});
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < tile; ++y)
          for (std::size_t x = 0; x < tile; ++x) patch(ch, y, x) = cube.data(ch, y0 + y, x0 + x);
      set.tiles.push_back(resize_bilinear(patch, resize_to, resize_to));
      set.labels.push_back(label);
    }
  return set;
}

HyperCube preprocess_nearrange(const HyperCube& cube, const NearRangeOptions& opts) {
  const std::size_t c = cube.channels(), h = cube.height(), w = cube.width();
  if (opts.drop_low + opts.drop_high >= c) throw ShapeError("channel drop removes every channel");
  const std::size_t crop = opts.crop;
  if (crop > std::min(h, w)) {
    throw ShapeError("crop " + std::to_string(crop) + " larger than image " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::size_t kept = c - opts.drop_low - opts.drop_high;
  const std::size_t crop_h = crop ? crop : h, crop_w = crop ? crop : w;
  const std::size_t y0 = (h - crop_h) / 2, x0 = (w - crop_w) / 2;

  Tensor cropped({kept, crop_h, crop_w});
  for (std::size_t k = 0; k < kept; ++k)
    for (std::size_t y = 0; y < crop_h; ++y)
      for (std::size_t x = 0; x < crop_w; ++x) cropped(k, y, x) = cube.data(k + opts.drop_low, y0 + y, x0 + x);

  Tensor resized = opts.resize_to ? resize_bilinear(cropped, opts.resize_to, opts.resize_to) : std::move(cropped);

  HyperCube out;
  if (opts.pad == 0) {
    out.data = std::move(resized);
  } else {
    const std::size_t rh = resized.shape()[1], rw = resized.shape()[2];
    Tensor padded({kept, rh + 2 * opts.pad, rw + 2 * opts.pad});
    for (std::size_t k = 0; k < kept; ++k)
      for (std::size_t y = 0; y < rh; ++y)
        for (std::size_t x = 0; x < rw; ++x) padded(k, y + opts.pad, x + opts.pad) = resized(k, y, x);
    out.data = std::move(padded);
  }
  if (cube.labels && !opts.resize_to) {
    const std::size_t ph = crop_h + 2 * opts.pad, pw = crop_w + 2 * opts.pad;
    std::vector<std::int32_t> labels(ph * pw, -1);
    for (std::size_t y = 0; y < crop_h; ++y)
      for (std::size_t x = 0; x < crop_w; ++x)
        labels[(y + opts.pad) * pw + x + opts.pad] = (*cube.labels)[(y0 + y) * w + x0 + x];
    out.labels = std::move(labels);
  }
  return out;
}

std::pair<TileSet, TileSet> split_tiles(const TileSet& set, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw DataError("train fraction must lie in [0, 1]");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(set.size())));
  TileSet train, test;
  train.split = Split::Train;
  test.split = Split::Test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? train : test;
    dst.tiles.push_back(set.tiles[order[i]]);
    dst.labels.push_back(set.labels[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

// Normalization -------------------------------------------------------------------

ChannelStats compute_stats(const TileSet& set) {
  const auto& shape = set.tile_shape();
  const std::size_t c = shape[0], plane = shape[1] * shape[2];
  ChannelStats stats{Vector(c, 0.0), Vector(c, 0.0)};
  const double n = static_cast<double>(plane * set.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (const auto& t : set.tiles)
      for (std::size_t i = 0; i < plane; ++i) sum += t[ch * plane + i];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& t : set.tiles)
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = t[ch * plane + i] - mean;
        ss += d * d;
      }
    const double sd = std::sqrt(ss / n);
    stats.mean[ch] = mean;
    stats.std[ch] = sd < 1e-12 ? 1.0 : sd;
  }
  return stats;
}

void apply_stats(TileSet& set, const ChannelStats& stats) {
  for (auto& t : set.tiles) {
    if (t.shape()[0] != stats.mean.size()) throw ShapeError("stats channel count differs from tiles");
    const std::size_t plane = t.shape()[1] * t.shape()[2];
    for (std::size_t ch = 0; ch < stats.mean.size(); ++ch)
      for (std::size_t i = 0; i < plane; ++i) t[ch * plane + i] = (t[ch * plane + i] - stats.mean[ch]) / stats.std[ch];
  }
  set.stats = stats;
}

ChannelStats normalize(TileSet& train) {
  auto stats = compute_stats(train);
  apply_stats(train, stats);
  return stats;
}

}  // namespace hyperadapt
