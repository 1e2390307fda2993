#include "hyperadapt/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/parallel.hpp"
#include "hyperadapt/random.hpp"

namespace hyperadapt {

const char* to_string(Method m) {
  switch (m) {
    case Method::Reduce:
      return "reduce";
    case Method::Scratch:
      return "scratch";
    case Method::Cp:
      return "cp";
    case Method::Tucker:
      return "tucker";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "reduce") return Method::Reduce;
  if (name == "scratch") return Method::Scratch;
  if (name == "cp") return Method::Cp;
  if (name == "tucker") return Method::Tucker;
  throw DataError("unknown method '" + std::string(name) + "' (expected reduce, scratch, cp or tucker)");
}

namespace {

constexpr std::string_view kSpectral = "first.spectral";
constexpr std::string_view kHorizontal = "first.horizontal";
constexpr std::string_view kVertical = "first.vertical";
constexpr std::string_view kCore = "first.core";
constexpr std::string_view kFirstBias = "first.bias";
constexpr std::string_view kFirstWeight = "first.weight";
constexpr std::string_view kRgb = "first.rgb";
constexpr std::string_view kPw1 = "reduce.pw1.weight";
constexpr std::string_view kPw1Bias = "reduce.pw1.bias";
constexpr std::string_view kPw2 = "reduce.pw2.weight";
constexpr std::string_view kPw2Bias = "reduce.pw2.bias";
constexpr std::string_view kMid = "mid.weight";
constexpr std::string_view kMidBias = "mid.bias";
constexpr std::string_view kFc = "fc.weight";
constexpr std::string_view kFcBias = "fc.bias";

ParamBlock frozen(std::string_view name, Tensor t) { return {std::string(name), std::move(t), false}; }
ParamBlock trainable(std::string_view name, Tensor t) { return {std::string(name), std::move(t), true}; }

Tensor bias_tensor(const std::optional<Vector>& bias, std::size_t n) {
  return Tensor({n}, bias ? *bias : Vector(n, 0.0));
}

ConvSpec pointwise(std::size_t in, std::size_t out) { return ConvSpec{in, out, 1, 1}; }

ConvSpec dense_spec(const FirstLayerGeometry& g, std::size_t in) {
  return ConvSpec{in, g.out_channels, g.k1, g.k2, g.stride, g.stride, g.padding, g.padding, 1};
}

ConvSpec cp_horizontal_spec(const FirstLayerGeometry& g) {
  const std::size_t n = g.out_channels * g.rank;
  return ConvSpec{n, n, g.k1, 1, g.stride, 1, g.padding, 0, n};
}

ConvSpec cp_vertical_spec(const FirstLayerGeometry& g) {
  const std::size_t n = g.out_channels * g.rank;
  return ConvSpec{n, n, 1, g.k2, 1, g.stride, 0, g.padding, n};
}

ConvSpec tucker_core_spec(const FirstLayerGeometry& g) {
  return ConvSpec{g.out_channels * g.rank, g.out_channels, g.k1, g.k2, g.stride, g.stride, g.padding, g.padding,
                  g.out_channels};
}

void add_scaled(Tensor& dst, std::span<const double> src, double scale) {
  if (dst.size() != src.size()) throw ShapeError("gradient buffer size mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

std::size_t FirstLayer::trainable_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks)
    if (b.trainable) n += b.value.size();
  return n;
}

FirstLayer first_layer_from_adapted(const AdaptedLayer& layer, std::size_t stride, std::size_t padding) {
  FirstLayer out;
  auto& g = out.geometry;
  g.method = layer.kind == DecompKind::Cp ? Method::Cp : Method::Tucker;
  g.in_channels = layer.channels;
  g.out_channels = layer.filters();
  g.k1 = layer.k1;
  g.k2 = layer.k2;
  g.rank = layer.rank;
  g.stride = stride;
  g.padding = padding;
  g.source_channels = layer.source_channels;

  const std::size_t co = g.out_channels, r = g.rank;
  Tensor spectral({co * r, g.in_channels, 1, 1});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t c = 0; c < g.in_channels; ++c) spectral[(o * r + k) * g.in_channels + c] = layer.spectral[o](c, k);
  out.blocks.push_back(trainable(kSpectral, std::move(spectral)));

  if (layer.kind == DecompKind::Cp) {
    Tensor h({co * r, 1, g.k1, 1});
    Tensor v({co * r, 1, 1, g.k2});
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t i = 0; i < g.k1; ++i) h[(o * r + k) * g.k1 + i] = layer.horizontal[o](i, k);
        for (std::size_t j = 0; j < g.k2; ++j) v[(o * r + k) * g.k2 + j] = layer.vertical[o](j, k);
      }
    out.blocks.push_back(frozen(kHorizontal, std::move(h)));
    out.blocks.push_back(frozen(kVertical, std::move(v)));
  } else {
    Tensor core({co, r, g.k1, g.k2});
    const std::size_t n = r * g.k1 * g.k2;
    for (std::size_t o = 0; o < co; ++o) std::copy_n(layer.core[o].data().begin(), n, core.data().begin() + o * n);
    out.blocks.push_back(frozen(kCore, std::move(core)));
  }
  out.blocks.push_back(frozen(kFirstBias, bias_tensor(layer.bias, co)));
  return out;
}

std::size_t reduce_hidden_width(std::size_t rank, std::size_t out_channels, std::size_t channels) {
  const double m = static_cast<double>(rank * out_channels * channels) / static_cast<double>(channels + 3);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(m)));
}

FirstLayer build_reduce(std::size_t channels, std::size_t hidden, const FilterBank& rgb, std::uint64_t seed,
                        std::size_t stride, std::size_t padding) {
  if (hidden == 0) throw ShapeError("reduce hidden width must be at least 1");
  if (channels == 0) throw ShapeError("channel count must be at least 1");
  FirstLayer out;
  auto& g = out.geometry;
  g.method = Method::Reduce;
  g.in_channels = channels;
  g.out_channels = rgb.out_channels();
  g.k1 = rgb.k1();
  g.k2 = rgb.k2();
  g.hidden = hidden;
  g.stride = stride;
  g.padding = padding;
  g.source_channels = rgb.in_channels();

  Rng rng(mix_seed(seed, 11));
  const double b1 = std::sqrt(6.0 / static_cast<double>(channels));
  const double b2 = std::sqrt(6.0 / static_cast<double>(hidden));
  out.blocks.push_back(trainable(kPw1, Tensor({hidden, channels, 1, 1}, uniform_vector(rng, hidden * channels, b1))));
  out.blocks.push_back(trainable(kPw1Bias, Tensor({hidden})));
  const std::size_t src = rgb.in_channels();
  out.blocks.push_back(trainable(kPw2, Tensor({src, hidden, 1, 1}, uniform_vector(rng, src * hidden, b2))));
  out.blocks.push_back(trainable(kPw2Bias, Tensor({src})));
  out.blocks.push_back(frozen(kRgb, rgb.weights));
  out.blocks.push_back(frozen(kFirstBias, bias_tensor(rgb.bias, g.out_channels)));
  return out;
}

FirstLayer build_scratch(std::size_t channels, const FilterBank& rgb, std::uint64_t seed, std::size_t stride,
                         std::size_t padding) {
  if (channels == 0) throw ShapeError("channel count must be at least 1");
  FirstLayer out;
  auto& g = out.geometry;
  g.method = Method::Scratch;
  g.in_channels = channels;
  g.out_channels = rgb.out_channels();
  g.k1 = rgb.k1();
  g.k2 = rgb.k2();
  g.stride = stride;
  g.padding = padding;
  g.source_channels = rgb.in_channels();

  Rng rng(mix_seed(seed, 12));
  const std::size_t fan_in = channels * g.k1 * g.k2;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  out.blocks.push_back(trainable(
      kFirstWeight, Tensor({g.out_channels, channels, g.k1, g.k2}, uniform_vector(rng, g.out_channels * fan_in, bound))));
  out.blocks.push_back(frozen(kFirstBias, bias_tensor(rgb.bias, g.out_channels)));
  return out;
}

// Model ---------------------------------------------------------------------------

struct Model::Cache {
  std::vector<Tensor> stages;
};

Model::Model(FirstLayer first, HeadConfig head, std::uint64_t seed)
    : geometry_(first.geometry), head_(head), blocks_(std::move(first.blocks)) {
  if (head_.mid_channels == 0) head_.mid_channels = 2 * geometry_.out_channels;
  if (head_.classes < 1 || head_.pool_h == 0 || head_.pool_w == 0) throw ShapeError("invalid classifier head");
  const std::size_t co = geometry_.out_channels, mid = head_.mid_channels;

  Rng mid_rng(mix_seed(seed, 21));
  const double he = std::sqrt(2.0 / static_cast<double>(co * 9));
  blocks_.push_back(frozen(kMid, Tensor({mid, co, 3, 3}, normal_vector(mid_rng, mid * co * 9, he))));
  blocks_.push_back(frozen(kMidBias, Tensor({mid})));

  Rng fc_rng(mix_seed(seed, 22));
  const std::size_t features = mid * head_.pool_h * head_.pool_w;
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  blocks_.push_back(
      trainable(kFc, Tensor({head_.classes, features}, uniform_vector(fc_rng, head_.classes * features, bound))));
  blocks_.push_back(trainable(kFcBias, Tensor({head_.classes})));
  bind();
}

Model::Model(FirstLayerGeometry geometry, HeadConfig head, std::vector<ParamBlock> blocks)
    : geometry_(geometry), head_(head), blocks_(std::move(blocks)) {
  bind();
}

// Validates block names and shapes against the geometry.
void Model::bind() {
  const auto& g = geometry_;
  if (g.in_channels == 0 || g.out_channels == 0 || g.k1 == 0 || g.k2 == 0 || g.stride == 0) {
    throw ShapeError("first-layer geometry has a zero extent");
  }
  if ((g.method == Method::Cp || g.method == Method::Tucker) && g.rank == 0) throw ShapeError("rank must be >= 1");
  if (g.method == Method::Reduce && g.hidden == 0) throw ShapeError("reduce hidden width must be >= 1");

  std::vector<std::pair<std::string_view, Shape>> expected;
  const std::size_t co = g.out_channels, r = g.rank;
  switch (g.method) {
    case Method::Cp:
      expected = {{kSpectral, {co * r, g.in_channels, 1, 1}},
                  {kHorizontal, {co * r, 1, g.k1, 1}},
                  {kVertical, {co * r, 1, 1, g.k2}},
                  {kFirstBias, {co}}};
      break;
    case Method::Tucker:
      expected = {{kSpectral, {co * r, g.in_channels, 1, 1}}, {kCore, {co, r, g.k1, g.k2}}, {kFirstBias, {co}}};
      break;
    case Method::Reduce:
      expected = {{kPw1, {g.hidden, g.in_channels, 1, 1}},
                  {kPw1Bias, {g.hidden}},
                  {kPw2, {g.source_channels, g.hidden, 1, 1}},
                  {kPw2Bias, {g.source_channels}},
                  {kRgb, {co, g.source_channels, g.k1, g.k2}},
                  {kFirstBias, {co}}};
      break;
    case Method::Scratch:
      expected = {{kFirstWeight, {co, g.in_channels, g.k1, g.k2}}, {kFirstBias, {co}}};
      break;
  }
  first_blocks_ = expected.size();
  const std::size_t mid = head_.mid_channels;
  const std::size_t features = mid * head_.pool_h * head_.pool_w;
  expected.push_back({kMid, {mid, co, 3, 3}});
  expected.push_back({kMidBias, {mid}});
  expected.push_back({kFc, {head_.classes, features}});
  expected.push_back({kFcBias, {head_.classes}});

  if (blocks_.size() != expected.size()) {
    throw FormatError("model has " + std::to_string(blocks_.size()) + " blocks, expected " +
                      std::to_string(expected.size()) + " for method " + to_string(g.method));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (blocks_[i].name != expected[i].first) {
      throw FormatError("model block " + std::to_string(i) + " is '" + blocks_[i].name + "', expected '" +
                        std::string(expected[i].first) + "'");
    }
    if (blocks_[i].value.shape() != expected[i].second) {
      throw ShapeError("model block '" + blocks_[i].name + "' has the wrong shape");
    }
  }
  mid_spec_ = ConvSpec::square(co, mid, 3, 1, 1);
}

std::size_t Model::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw IndexError("no parameter block named '" + std::string(name) + "'");
}

const ParamBlock& Model::block(std::string_view name) const { return blocks_[index_of(name)]; }

std::size_t Model::feature_count() const { return head_.mid_channels * head_.pool_h * head_.pool_w; }

Tensor Model::first_forward(const Tensor& x, Cache* cache) const {
  const auto& g = geometry_;
  if (x.order() != 3 || x.shape()[0] != g.in_channels) {
    throw ShapeError("model expects " + std::to_string(g.in_channels) + "-channel C x H x W input");
  }
  const auto& bias = block(kFirstBias).value.values();
  switch (g.method) {
    case Method::Cp: {
      Tensor z1 = conv2d_forward(x, pointwise(g.in_channels, g.out_channels * g.rank), block(kSpectral).value);
      Tensor z2 = conv2d_forward(z1, cp_horizontal_spec(g), block(kHorizontal).value);
      Tensor z3 = conv2d_forward(z2, cp_vertical_spec(g), block(kVertical).value);
      Tensor y = group_sum(z3, g.rank);
      if (cache) {
        cache->stages.push_back(std::move(z1));
        cache->stages.push_back(std::move(z2));
      }
      const std::size_t plane = y.shape()[1] * y.shape()[2];
      for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t i = 0; i < plane; ++i) y[o * plane + i] += bias[o];
      return y;
    }
    case Method::Tucker: {
      Tensor z1 = conv2d_forward(x, pointwise(g.in_channels, g.out_channels * g.rank), block(kSpectral).value);
      Tensor y = conv2d_forward(z1, tucker_core_spec(g), block(kCore).value, bias);
      if (cache) cache->stages.push_back(std::move(z1));
      return y;
    }
    case Method::Reduce: {
      Tensor a = conv2d_forward(x, pointwise(g.in_channels, g.hidden), block(kPw1).value, block(kPw1Bias).value.values());
      Tensor h = relu(a);
      Tensor r = conv2d_forward(h, pointwise(g.hidden, g.source_channels), block(kPw2).value,
                                block(kPw2Bias).value.values());
      Tensor y = conv2d_forward(r, dense_spec(g, g.source_channels), block(kRgb).value, bias);
      if (cache) {
        cache->stages.push_back(std::move(a));
        cache->stages.push_back(std::move(h));
        cache->stages.push_back(std::move(r));
      }
      return y;
    }
    case Method::Scratch:
      return conv2d_forward(x, dense_spec(g, g.in_channels), block(kFirstWeight).value, bias);
  }
  throw UnsupportedKind("unknown first-layer method");
}

void Model::first_backward(const Tensor& x, const Cache& cache, const Tensor& grad_out, double sign,
                           Gradients& grads) const {
  const auto& g = geometry_;
  auto accumulate = [&](std::string_view name, std::span<const double> grad) {
    const auto i = index_of(name);
    if (blocks_[i].trainable) add_scaled(grads[i], grad, sign);
  };
  auto wants = [&](std::string_view name) { return blocks_[index_of(name)].trainable; };

  {
    Vector bias_grad(g.out_channels, 0.0);
    const std::size_t plane = grad_out.shape()[1] * grad_out.shape()[2];
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < plane; ++i) bias_grad[o] += grad_out[o * plane + i];
    accumulate(kFirstBias, bias_grad);
  }

  switch (g.method) {
    case Method::Cp: {
      const Tensor& z1 = cache.stages[0];
      const Tensor& z2 = cache.stages[1];
      const Tensor dz3 = group_sum_backward(grad_out, g.rank);
      auto gv = conv2d_backward(z2, cp_vertical_spec(g), block(kVertical).value, dz3, true, wants(kVertical));
      if (wants(kVertical)) accumulate(kVertical, gv.weights.data());
      auto gh = conv2d_backward(z1, cp_horizontal_spec(g), block(kHorizontal).value, gv.input, true, wants(kHorizontal));
      if (wants(kHorizontal)) accumulate(kHorizontal, gh.weights.data());
      if (wants(kSpectral)) {
        auto gs = conv2d_backward(x, pointwise(g.in_channels, g.out_channels * g.rank), block(kSpectral).value,
                                  gh.input, false, true);
        accumulate(kSpectral, gs.weights.data());
      }
      break;
    }
    case Method::Tucker: {
      const Tensor& z1 = cache.stages[0];
      auto gc = conv2d_backward(z1, tucker_core_spec(g), block(kCore).value, grad_out, true, wants(kCore));
      if (wants(kCore)) accumulate(kCore, gc.weights.data());
      if (wants(kSpectral)) {
        auto gs = conv2d_backward(x, pointwise(g.in_channels, g.out_channels * g.rank), block(kSpectral).value,
                                  gc.input, false, true);
        accumulate(kSpectral, gs.weights.data());
      }
      break;
    }
    case Method::Reduce: {
      const Tensor& a = cache.stages[0];
      const Tensor& h = cache.stages[1];
      const Tensor& r = cache.stages[2];
      auto g3 = conv2d_backward(r, dense_spec(g, g.source_channels), block(kRgb).value, grad_out, true, wants(kRgb));
      if (wants(kRgb)) accumulate(kRgb, g3.weights.data());
      auto g2 = conv2d_backward(h, pointwise(g.hidden, g.source_channels), block(kPw2).value, g3.input, true,
                                wants(kPw2));
      if (wants(kPw2)) accumulate(kPw2, g2.weights.data());
      accumulate(kPw2Bias, g2.bias);
      const Tensor da = relu_backward(a, g2.input);
      auto g1 = conv2d_backward(x, pointwise(g.in_channels, g.hidden), block(kPw1).value, da, false, wants(kPw1));
      if (wants(kPw1)) accumulate(kPw1, g1.weights.data());
      accumulate(kPw1Bias, g1.bias);
      break;
    }
    case Method::Scratch: {
      if (wants(kFirstWeight)) {
        auto gw = conv2d_backward(x, dense_spec(g, g.in_channels), block(kFirstWeight).value, grad_out, false, true);
        accumulate(kFirstWeight, gw.weights.data());
      }
      break;
    }
  }
}

Tensor Model::first_layer_forward(const Tensor& x) const { return first_forward(x, nullptr); }

Vector Model::logits(const Tensor& x) const {
  const Tensor a1 = relu(first_forward(x, nullptr));
  const Tensor m = conv2d_forward(a1, mid_spec_, block(kMid).value, block(kMidBias).value.values());
  const Tensor p = adaptive_avg_pool(relu(m), head_.pool_h, head_.pool_w);
  const auto& w = block(kFc).value;
  const auto& b = block(kFcBias).value;
  const std::size_t features = feature_count();
  Vector out(head_.classes);
  for (std::size_t k = 0; k < head_.classes; ++k) {
    double s = b[k];
    for (std::size_t f = 0; f < features; ++f) s += w[k * features + f] * p[f];
    out[k] = s;
  }
  return out;
}

double cross_entropy(std::span<const double> logits, int label, Vector* grad) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) (*grad)[k] = std::exp(logits[k] - lse);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(label)];
}

double Model::accumulate_gradients(const Tensor& x, int label, double scale, Gradients& grads,
                                   Vector* logits_out) const {
  if (grads.size() != blocks_.size()) throw ShapeError("gradient buffer count differs from block count");
  Cache cache;
  const Tensor y = first_forward(x, &cache);
  const Tensor a1 = relu(y);
  const Tensor m = conv2d_forward(a1, mid_spec_, block(kMid).value, block(kMidBias).value.values());
  const Tensor a2 = relu(m);
  const Tensor p = adaptive_avg_pool(a2, head_.pool_h, head_.pool_w);

  const std::size_t fc = index_of(kFc), fcb = index_of(kFcBias);
  const auto& w = blocks_[fc].value;
  const std::size_t features = feature_count();
  Vector z(head_.classes);
  for (std::size_t k = 0; k < head_.classes; ++k) {
    double s = blocks_[fcb].value[k];
    for (std::size_t f = 0; f < features; ++f) s += w[k * features + f] * p[f];
    z[k] = s;
  }
  Vector dz;
  const double loss = cross_entropy(z, label, &dz);
  for (auto& v : dz) v *= scale;
  if (logits_out) *logits_out = z;

  if (blocks_[fc].trainable)
    for (std::size_t k = 0; k < head_.classes; ++k)
      for (std::size_t f = 0; f < features; ++f) grads[fc][k * features + f] += dz[k] * p[f];
  if (blocks_[fcb].trainable) add_scaled(grads[fcb], dz, 1.0);

  Tensor dp(p.shape());
  for (std::size_t k = 0; k < head_.classes; ++k)
    for (std::size_t f = 0; f < features; ++f) dp[f] += w[k * features + f] * dz[k];

  const Tensor dm = relu_backward(m, adaptive_avg_pool_backward(a2.shape(), dp));
  const std::size_t mid = index_of(kMid), midb = index_of(kMidBias);
  auto gm = conv2d_backward(a1, mid_spec_, blocks_[mid].value, dm, true, blocks_[mid].trainable);
  if (blocks_[mid].trainable) add_scaled(grads[mid], gm.weights.data(), 1.0);
  if (blocks_[midb].trainable) add_scaled(grads[midb], gm.bias, 1.0);

  const Tensor dy = relu_backward(y, gm.input);
  first_backward(x, cache, dy, flip_first_layer_gradient ? -1.0 : 1.0, grads);
  return loss;
}

Gradients Model::zero_gradients() const {
  Gradients g(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].trainable) g[i] = Tensor(blocks_[i].value.shape());
  return g;
}

std::size_t Model::count_trainable() const {
  std::size_t n = 0;
  for (const auto& b : blocks_)
    if (b.trainable) n += b.value.size();
  return n;
}

std::size_t Model::first_layer_trainable() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < first_blocks_; ++i)
    if (blocks_[i].trainable) n += blocks_[i].value.size();
  return n;
}

AdaptedLayer Model::adapted_layer() const {
  const auto& g = geometry_;
  if (g.method != Method::Cp && g.method != Method::Tucker) {
    throw UnsupportedKind(std::string("method ") + to_string(g.method) + " has no decomposed first layer");
  }
  AdaptedLayer layer;
  layer.kind = g.method == Method::Cp ? DecompKind::Cp : DecompKind::Tucker;
  layer.channels = g.in_channels;
  layer.source_channels = g.source_channels;
  layer.k1 = g.k1;
  layer.k2 = g.k2;
  layer.rank = g.rank;
  layer.bias = block(kFirstBias).value.values();
  const std::size_t co = g.out_channels, r = g.rank;
  const auto& spectral = block(kSpectral).value;
  for (std::size_t o = 0; o < co; ++o) {
    Matrix s(g.in_channels, r);
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t c = 0; c < g.in_channels; ++c) s(c, k) = spectral[(o * r + k) * g.in_channels + c];
    layer.spectral.push_back(std::move(s));
    if (layer.kind == DecompKind::Cp) {
      const auto& hb = block(kHorizontal).value;
      const auto& vb = block(kVertical).value;
      Matrix h(g.k1, r), v(g.k2, r);
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t i = 0; i < g.k1; ++i) h(i, k) = hb[(o * r + k) * g.k1 + i];
        for (std::size_t j = 0; j < g.k2; ++j) v(j, k) = vb[(o * r + k) * g.k2 + j];
      }
      layer.horizontal.push_back(std::move(h));
      layer.vertical.push_back(std::move(v));
    } else {
      const auto& cb = block(kCore).value;
      const std::size_t n = r * g.k1 * g.k2;
      layer.core.emplace_back(Shape{r, g.k1, g.k2},
                              std::vector<double>(cb.data().begin() + static_cast<std::ptrdiff_t>(o * n),
                                                  cb.data().begin() + static_cast<std::ptrdiff_t>((o + 1) * n)));
    }
  }
  return layer;
}

Tensor Model::first_layer_bank() const {
  switch (geometry_.method) {
    case Method::Cp:
    case Method::Tucker:
      return decompress(adapted_layer());
    case Method::Scratch:
      return block(kFirstWeight).value;
    case Method::Reduce:
      return block(kRgb).value;
  }
  throw UnsupportedKind("unknown first-layer method");
}

// Batches -------------------------------------------------------------------------

BatchResult forward_backward(const Model& model, std::span<const Tensor> batch, std::span<const int> labels) {
  if (batch.size() != labels.size()) throw ShapeError("batch and label counts differ");
  if (batch.empty()) throw DataError("empty batch");
  const std::size_t n = batch.size();
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<Gradients> per_sample(n);
  std::vector<double> losses(n);
  std::vector<char> correct(n);
  parallel_for(n, [&](std::size_t i) {
    per_sample[i] = model.zero_gradients();
    Vector z;
    losses[i] = model.accumulate_gradients(batch[i], labels[i], scale, per_sample[i], &z);
    correct[i] = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) ==
                 static_cast<std::size_t>(labels[i]);
  });

  BatchResult out;
  out.grads = model.zero_gradients();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.loss += losses[i];
    hits += correct[i] ? 1 : 0;
    for (std::size_t b = 0; b < out.grads.size(); ++b)
      if (model.blocks()[b].trainable) add_scaled(out.grads[b], per_sample[i][b].data(), 1.0);
  }
  out.loss /= static_cast<double>(n);
  out.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

Evaluation evaluate(const Model& model, const TileSet& set) {
  if (set.empty()) return {};
  const std::size_t n = set.size();
  std::vector<double> losses(n);
  std::vector<char> correct(n);
  parallel_for(n, [&](std::size_t i) {
    const Vector z = model.logits(set.tiles[i]);
    losses[i] = cross_entropy(z, set.labels[i]);
    correct[i] = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) ==
                 static_cast<std::size_t>(set.labels[i]);
  });
  Evaluation e;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    e.loss += losses[i];
    hits += correct[i] ? 1 : 0;
  }
  e.loss /= static_cast<double>(n);
  e.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return e;
}

std::size_t count_trainable(const Model& model) { return model.count_trainable(); }

Model build_model(Method method, const FilterBank& rgb, const ModelBuildOptions& opts) {
  if (opts.channels == 0) throw ShapeError("model needs at least one input channel");
  switch (method) {
    case Method::Cp:
    case Method::Tucker: {
      const auto kind = method == Method::Cp ? DecompKind::Cp : DecompKind::Tucker;
      const auto decomps = decompose_bank(rgb, kind, opts.rank, opts.cp);
      const auto layer = adapt(decomps, opts.channels, opts.init, mix_seed(opts.seed, 31));
      return Model(first_layer_from_adapted(layer, opts.stride, opts.padding), opts.head, opts.seed);
    }
    case Method::Reduce: {
      const std::size_t hidden =
          opts.reduce_hidden ? opts.reduce_hidden : reduce_hidden_width(opts.rank, rgb.out_channels(), opts.channels);
      return Model(build_reduce(opts.channels, hidden, rgb, opts.seed, opts.stride, opts.padding), opts.head, opts.seed);
    }
    case Method::Scratch:
      return Model(build_scratch(opts.channels, rgb, opts.seed, opts.stride, opts.padding), opts.head, opts.seed);
  }
  throw UnsupportedKind("unknown method");
}

// MDL1 ----------------------------------------------------------------------------

Bytes encode_model(const Model& model) {
  BinaryWriter w;
  w.magic("MDL1");
  const auto& g = model.geometry();
  const auto& h = model.head();
  w.u8(static_cast<std::uint8_t>(g.method));
  for (auto v : {g.in_channels, g.out_channels, g.k1, g.k2, g.rank, g.hidden, g.stride, g.padding, g.source_channels,
                 h.mid_channels, h.pool_h, h.pool_w, h.classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(model.blocks().size()));
  for (const auto& b : model.blocks()) {
    w.str(b.name);
    w.u8(b.trainable ? 1 : 0);
    write_tensor(w, b.value);
  }
  return w.take();
}

Model decode_model(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  r.expect_magic("MDL1");
  const auto method = r.u8();
  if (method > 3) throw FormatError(context + ": unknown method tag " + std::to_string(method));
  FirstLayerGeometry g;
  HeadConfig h;
  g.method = static_cast<Method>(method);
  for (auto* v : {&g.in_channels, &g.out_channels, &g.k1, &g.k2, &g.rank, &g.hidden, &g.stride, &g.padding,
                  &g.source_channels, &h.mid_channels, &h.pool_h, &h.pool_w, &h.classes}) {
    *v = r.u32();
  }
  const auto count = r.u32();
  std::vector<ParamBlock> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamBlock b;
    b.name = r.str();
    b.trainable = r.u8() != 0;
    b.value = read_tensor(r);
    blocks.push_back(std::move(b));
  }
  r.expect_end();
  return Model(g, h, std::move(blocks));
}

void save_model(const std::filesystem::path& path, const Model& model) { write_file_atomic(path, encode_model(model)); }

Model load_model(const std::filesystem::path& path) { return decode_model(read_file(path), path.string()); }

}  // namespace hyperadapt
