#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hyperadapt/conv.hpp"
#include "hyperadapt/data.hpp"
#include "hyperadapt/filteradapt.hpp"

namespace hyperadapt {

/// First-layer strategy for hyperspectral input.
enum class Method : std::uint8_t {
  Reduce = 0,   // 1×1 conv → ReLU → 1×1 conv down to 3 channels, then the frozen RGB layer
  Scratch = 1,  // full Ĉ_in-channel layer trained from a fresh init
  Cp = 2,       // pointwise (trainable) → depthwise k1×1 → depthwise 1×k2 → sum over rank
  Tucker = 3,   // pointwise (trainable) → grouped k1×k2 core conv
};

const char* to_string(Method m);
Method parse_method(std::string_view name);

struct ParamBlock {
  std::string name;
  Tensor value;
  bool trainable = false;
};

struct FirstLayerGeometry {
  Method method = Method::Cp;
  std::size_t in_channels = 0;   // Ĉ_in
  std::size_t out_channels = 0;  // C_out
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t rank = 0;    // Cp / Tucker
  std::size_t hidden = 0;  // Reduce
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t source_channels = 3;
};

struct FirstLayer {
  FirstLayerGeometry geometry;
  std::vector<ParamBlock> blocks;

  std::size_t trainable_count() const;
};

/// Separable realization of an adapted layer. Blocks:
///   CP:     first.spectral [C_out·R, Ĉ_in, 1, 1] (trainable), first.horizontal
///           [C_out·R, 1, k1, 1], first.vertical [C_out·R, 1, 1, k2], first.bias
///   Tucker: first.spectral (trainable), first.core [C_out, R, k1, k2], first.bias
/// Channel o·R + r of the pointwise stage carries spectral column r of filter o.
FirstLayer first_layer_from_adapted(const AdaptedLayer& layer, std::size_t stride = 1, std::size_t padding = 0);

/// round(R·C_out·Ĉ_in / (Ĉ_in + 3)), at least 1: matches the decomposed
/// layers' trainable count.
std::size_t reduce_hidden_width(std::size_t rank, std::size_t out_channels, std::size_t channels);

/// pointwise(Ĉ_in→hidden)+bias → ReLU → pointwise(hidden→3)+bias → frozen RGB conv.
FirstLayer build_reduce(std::size_t channels, std::size_t hidden, const FilterBank& rgb, std::uint64_t seed,
                        std::size_t stride = 1, std::size_t padding = 0);

/// C_out × Ĉ_in × k1 × k2 trainable weights, uniform in ±sqrt(6 / (Ĉ_in·k1·k2));
/// the RGB bias is kept frozen.
FirstLayer build_scratch(std::size_t channels, const FilterBank& rgb, std::uint64_t seed, std::size_t stride = 1,
                         std::size_t padding = 0);

struct HeadConfig {
  /// Frozen 3×3 conv width; 0 selects 2·C_out.
  std::size_t mid_channels = 0;
  std::size_t pool_h = 1;
  std::size_t pool_w = 1;
  std::size_t classes = 2;
};

/// Gradient buffers aligned with Model::blocks(); entries of frozen blocks are
/// placeholders and never read.
using Gradients = std::vector<Tensor>;

/// first layer → ReLU → frozen 3×3 conv (pad 1) → ReLU → adaptive avg pool →
/// linear classifier. The classifier is trainable; the mid conv is frozen.
class Model {
 public:
  Model(FirstLayer first, HeadConfig head, std::uint64_t seed);
  /// Rebuilds a model from stored blocks (checkpoint loading).
  Model(FirstLayerGeometry geometry, HeadConfig head, std::vector<ParamBlock> blocks);

  const FirstLayerGeometry& geometry() const { return geometry_; }
  const HeadConfig& head() const { return head_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::string_view name) const;
  std::size_t feature_count() const;

  Tensor first_layer_forward(const Tensor& x) const;
  Vector logits(const Tensor& x) const;

  /// Cross-entropy loss of one sample. Adds scale·∂loss/∂θ into `grads` for
  /// every trainable block, backpropagating through the frozen stages.
  double accumulate_gradients(const Tensor& x, int label, double scale, Gradients& grads,
                              Vector* logits_out = nullptr) const;

  Gradients zero_gradients() const;
  std::size_t count_trainable() const;
  std::size_t first_layer_trainable() const;

  /// Current CP/Tucker first layer as an AdaptedLayer (spatial parts and
  /// spectral parts read back from the blocks).
  AdaptedLayer adapted_layer() const;
  /// Dense filters applied to the network input: decompressed bank for
  /// CP/Tucker, the trained weights for Scratch, the RGB bank for Reduce.
  Tensor first_layer_bank() const;

  /// Test hook: negates first-layer gradients so gradient checks must fail.
  bool flip_first_layer_gradient = false;

 private:
  struct Cache;
  Tensor first_forward(const Tensor& x, Cache* cache) const;
  void first_backward(const Tensor& x, const Cache& cache, const Tensor& grad_out, double sign,
                      Gradients& grads) const;
  std::size_t index_of(std::string_view name) const;
  void bind();

  FirstLayerGeometry geometry_;
  HeadConfig head_;
  std::vector<ParamBlock> blocks_;
  std::size_t first_blocks_ = 0;
  ConvSpec mid_spec_;
};

/// Log-sum-exp stabilized softmax cross-entropy of one sample; writes
/// ∂loss/∂logits into grad when non-null.
double cross_entropy(std::span<const double> logits, int label, Vector* grad = nullptr);

struct BatchResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Gradients grads;
};

/// Mean cross-entropy over the batch. Per-sample gradients are computed in
/// parallel and reduced in sample order, so results do not depend on the
/// thread count.
BatchResult forward_backward(const Model& model, std::span<const Tensor> batch, std::span<const int> labels);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const Model& model, const TileSet& set);

std::size_t count_trainable(const Model& model);

struct ModelBuildOptions {
  std::size_t channels = 0;  // Ĉ_in
  std::size_t rank = 2;
  InitPolicy init = InitPolicy::Interp;
  CpOptions cp;
  std::size_t reduce_hidden = 0;  // 0 selects reduce_hidden_width
  std::size_t stride = 1;
  std::size_t padding = 0;
  HeadConfig head;
  std::uint64_t seed = 0;
};

/// Builds a complete model for `method` on top of an RGB first-layer bank,
/// decomposing and adapting the bank for CP/Tucker.
Model build_model(Method method, const FilterBank& rgb, const ModelBuildOptions& opts);

// MDL1 layout (little-endian):
//   "MDL1", u8 method, u32 in_channels, out_channels, k1, k2, rank, hidden,
//   stride, padding, source_channels, mid_channels, pool_h, pool_w, classes,
//   u32 block count, then per block: u32 name length, name bytes,
//   u8 trainable, TNS1 tensor.
Bytes encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes, const std::string& context = "MDL1");
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace hyperadapt
