#pragma once

#include <span>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Geometry of a 2-D (grouped) cross-correlation. Weights are laid out
/// out_channels × (in_channels / groups) × kh × kw.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t groups = 1;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                         std::size_t pad = 0, std::size_t groups = 1);

  void validate() const;
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kh, kw}; }
};

/// Cross-correlation (no kernel flip) of a C × H × W input. `bias` may be
/// empty or hold one value per output channel.
Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
                      std::span<const double> bias = {});

struct ConvGrads {
  Tensor input;    // valid when requested
  Tensor weights;  // valid when requested
  Vector bias;     // always filled
};

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& weights, const Tensor& grad_out,
                          bool want_input, bool want_weights);

Tensor relu(const Tensor& x);
/// Gradient of relu given its input.
Tensor relu_backward(const Tensor& pre, const Tensor& grad_out);

/// Each output cell averages input rows floor(i·H/h) .. ceil((i+1)·H/h)−1
/// (and likewise for columns).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor adaptive_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

/// Sums each run of `group` consecutive channels: C·group × H × W → C × H × W.
Tensor group_sum(const Tensor& x, std::size_t group);
Tensor group_sum_backward(const Tensor& grad_out, std::size_t group);

}  // namespace hyperadapt
