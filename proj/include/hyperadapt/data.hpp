#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/random.hpp"
#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Hyperspectral image Ĉ_in × H × W with an optional H × W label plane
/// (−1 marks unlabeled pixels).
struct HyperCube {
  Tensor data;
  std::optional<std::vector<std::int32_t>> labels;

  std::size_t channels() const { return data.shape()[0]; }
  std::size_t height() const { return data.shape()[1]; }
  std::size_t width() const { return data.shape()[2]; }
  std::int32_t label(std::size_t y, std::size_t x) const;
};

// HSC1: "HSC1", u32 channels, height, width, f32 data channel-major, then an
// optional i32 label plane of height × width entries.
Bytes encode_cube(const HyperCube& cube);
HyperCube decode_cube(std::span<const std::uint8_t> bytes, const std::string& context = "HSC1");
void save_cube(const std::filesystem::path& path, const HyperCube& cube);
HyperCube load_cube(const std::filesystem::path& path);

struct ChannelStats {
  Vector mean;
  Vector std;
};

enum class Split : std::uint8_t { Train = 0, Test = 1, Unsplit = 2 };

/// Equally shaped labeled tiles.
struct TileSet {
  std::vector<Tensor> tiles;
  std::vector<int> labels;
  Split split = Split::Unsplit;
  std::optional<ChannelStats> stats;

  std::size_t size() const { return tiles.size(); }
  bool empty() const { return tiles.empty(); }
  /// Shape shared by every tile; throws on an empty set.
  const Shape& tile_shape() const;
  int num_classes() const;
};

// TLS1: "TLS1", u8 split, u32 count, channels, h, w, u8 has_stats,
// [f64 mean[channels], f64 std[channels]], per tile i32 label + f64 data.
Bytes encode_tiles(const TileSet& set);
TileSet decode_tiles(std::span<const std::uint8_t> bytes, const std::string& context = "TLS1");
void save_tiles(const std::filesystem::path& path, const TileSet& set);
TileSet load_tiles(const std::filesystem::path& path);

/// Bilinear resize of every channel with align-corners=false pixel-center
/// mapping: source = (dst + 0.5)·in/out − 0.5, clamped to the image.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Number of tile offsets along an axis: floor((extent − tile)/stride) + 1.
std::size_t tile_positions(std::size_t extent, std::size_t tile, std::size_t stride);

/// Tiles at offsets {0, stride, ...} in both axes, keeping tiles whose center
/// pixel is labeled, each resized to resize_to × resize_to.
TileSet tile_remote_sensing(const HyperCube& cube, std::size_t tile = 11, std::size_t stride = 3,
                            std::size_t resize_to = 32);

struct NearRangeOptions {
  /// Center crop side; 0 keeps the full image.
  std::size_t crop = 0;
  /// Bilinear resize side; 0 keeps the cropped size.
  std::size_t resize_to = 0;
  std::size_t drop_low = 0;
  std::size_t drop_high = 0;
  /// Zero border added after resizing.
  std::size_t pad = 0;
};

/// Channel drop, center crop, bilinear resize, then zero padding. A label plane
/// follows the crop and padding (border labelled -1) and is dropped on resize.
HyperCube preprocess_nearrange(const HyperCube& cube, const NearRangeOptions& opts);

/// Seeded shuffle then split; the first train_fraction of the shuffled tiles
/// become the training set.
std::pair<TileSet, TileSet> split_tiles(const TileSet& set, double train_fraction, std::uint64_t seed);

/// Per-channel population mean and std over all pixels of all tiles. Channels
/// with std below 1e-12 get std 1.
ChannelStats compute_stats(const TileSet& set);
void apply_stats(TileSet& set, const ChannelStats& stats);
/// compute_stats + apply_stats on a training set; returns the stats for reuse
/// on the matching test set.
ChannelStats normalize(TileSet& train);

}  // namespace hyperadapt
