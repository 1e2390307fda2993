#include "hyperadapt/conv.hpp"

#include <algorithm>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

ConvSpec ConvSpec::square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                          std::size_t groups) {
  return ConvSpec{in, out, k, k, stride, stride, pad, pad, groups};
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kh == 0 || kw == 0 || stride_h == 0 || stride_w == 0 || groups == 0) {
    throw ShapeError("conv spec has a zero extent");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv channels (" + std::to_string(in_channels) + " -> " + std::to_string(out_channels) +
                     ") not divisible by groups " + std::to_string(groups));
  }
}

std::size_t ConvSpec::out_h(std::size_t h) const {
  if (h + 2 * pad_h < kh) throw ShapeError("conv input height smaller than kernel");
  return (h + 2 * pad_h - kh) / stride_h + 1;
}

std::size_t ConvSpec::out_w(std::size_t w) const {
  if (w + 2 * pad_w < kw) throw ShapeError("conv input width smaller than kernel");
  return (w + 2 * pad_w - kw) / stride_w + 1;
}

namespace {

struct Range {
  std::size_t lo = 0, hi = 0;  // half-open over output positions
};

// Output positions o with 0 <= o*stride + k - pad < in.
Range valid_outputs(std::size_t out, std::size_t in, std::size_t stride, std::size_t k, std::size_t pad) {
  const long lo_num = static_cast<long>(pad) - static_cast<long>(k);
  const long s = static_cast<long>(stride);
  long lo = lo_num > 0 ? (lo_num + s - 1) / s : 0;
  const long hi_num = static_cast<long>(in) - 1 + static_cast<long>(pad) - static_cast<long>(k);
  if (hi_num < 0) return {};
  long hi = std::min<long>(static_cast<long>(out), hi_num / s + 1);
  if (lo >= hi) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check_conv_inputs(const Tensor& x, const ConvSpec& spec, const Tensor& weights) {
  spec.validate();
  if (x.order() != 3) throw ShapeError("conv2d expects a C x H x W input");
  if (x.shape()[0] != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.shape()[0]) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) throw ShapeError("conv2d: weight shape does not match spec");
}

// Visits every (input element, weight element, output element) triple once.
template <typename Fn>
void for_each_tap(const ConvSpec& spec, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow, Fn&& fn) {
  const std::size_t in_per_group = spec.in_channels / spec.groups;
  const std::size_t out_per_group = spec.out_channels / spec.groups;
  for (std::size_t g = 0; g < spec.groups; ++g)
    for (std::size_t ol = 0; ol < out_per_group; ++ol) {
      const std::size_t oc = g * out_per_group + ol;
      for (std::size_t il = 0; il < in_per_group; ++il) {
        const std::size_t ic = g * in_per_group + il;
        for (std::size_t ki = 0; ki < spec.kh; ++ki) {
          const Range ry = valid_outputs(oh, h, spec.stride_h, ki, spec.pad_h);
          for (std::size_t kj = 0; kj < spec.kw; ++kj) {
            const Range rx = valid_outputs(ow, w, spec.stride_w, kj, spec.pad_w);
            if (rx.lo >= rx.hi) continue;
            const std::size_t widx = ((oc * in_per_group + il) * spec.kh + ki) * spec.kw + kj;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = oy * spec.stride_h + ki - spec.pad_h;
              // First valid tap in this row; always non-negative.
              const std::size_t in_start = (ic * h + iy) * w + rx.lo * spec.stride_w + kj - spec.pad_w;
              const std::size_t out_start = (oc * oh + oy) * ow + rx.lo;
              fn(widx, in_start, out_start, rx.hi - rx.lo);
            }
          }
        }
      }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec, const Tensor& weights, std::span<const double> bias) {
  check_conv_inputs(x, spec, weights);
  if (!bias.empty() && bias.size() != spec.out_channels) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  Tensor out({spec.out_channels, oh, ow});
  const double* in = x.data().data();
  const double* wt = weights.data().data();
  double* dst = out.data().data();
  const std::size_t sw = spec.stride_w;
  for_each_tap(spec, h, w, oh, ow, [&](std::size_t widx, std::size_t in_start, std::size_t out_start, std::size_t n) {
    const double wv = wt[widx];
    if (wv == 0.0) return;
    const double* src = in + in_start;
    double* o = dst + out_start;
    for (std::size_t i = 0; i < n; ++i) o[i] += wv * src[i * sw];
  });
  if (!bias.empty()) {
    for (std::size_t c = 0; c < spec.out_channels; ++c)
      for (std::size_t i = 0; i < oh * ow; ++i) dst[c * oh * ow + i] += bias[c];
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& weights, const Tensor& grad_out,
                          bool want_input, bool want_weights) {
  check_conv_inputs(x, spec, weights);
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  if (grad_out.shape() != Shape{spec.out_channels, oh, ow}) throw ShapeError("conv2d_backward: grad shape mismatch");

  ConvGrads g;
  g.bias.assign(spec.out_channels, 0.0);
  const double* go = grad_out.data().data();
  for (std::size_t c = 0; c < spec.out_channels; ++c)
    for (std::size_t i = 0; i < oh * ow; ++i) g.bias[c] += go[c * oh * ow + i];

  if (want_input) g.input = Tensor(x.shape());
  if (want_weights) g.weights = Tensor(weights.shape());
  if (!want_input && !want_weights) return g;

  const double* in = x.data().data();
  const double* wt = weights.data().data();
  double* gin = want_input ? g.input.data().data() : nullptr;
  double* gw = want_weights ? g.weights.data().data() : nullptr;
  const std::size_t sw = spec.stride_w;
  for_each_tap(spec, h, w, oh, ow, [&](std::size_t widx, std::size_t in_start, std::size_t out_start, std::size_t n) {
    const double* gor = go + out_start;
    if (gw) {
      const double* src = in + in_start;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += gor[i] * src[i * sw];
      gw[widx] += acc;
    }
    if (gin) {
      const double wv = wt[widx];
      if (wv == 0.0) return;
      double* gi = gin + in_start;
      for (std::size_t i = 0; i < n; ++i) gi[i * sw] += wv * gor[i];
    }
  });
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = v < 0.0 ? 0.0 : v;
  return out;
}

Tensor relu_backward(const Tensor& pre, const Tensor& grad_out) {
  if (pre.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(pre[i] > 0.0)) g[i] = 0.0;
  return g;
}

namespace {

std::size_t window_begin(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t window_end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }

void check_pool(const Shape& in, std::size_t out_h, std::size_t out_w) {
  if (in.size() != 3) throw ShapeError("adaptive_avg_pool expects a C x H x W tensor");
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool target must be positive");
  if (out_h > in[1] || out_w > in[2]) {
    throw ShapeError("adaptive_avg_pool target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " larger than input " + std::to_string(in[1]) + "x" + std::to_string(in[2]));
  }
}

}  // namespace

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  check_pool(x.shape(), out_h, out_w);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t y0 = window_begin(i, h, out_h), y1 = window_end(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t x0 = window_begin(j, w, out_w), x1 = window_end(j, w, out_w);
        double sum = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) sum += x(ch, y, xx);
        out(ch, i, j) = sum / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  return out;
}

Tensor adaptive_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t out_h = grad_out.shape()[1], out_w = grad_out.shape()[2];
  check_pool(input_shape, out_h, out_w);
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  Tensor g(input_shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t y0 = window_begin(i, h, out_h), y1 = window_end(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t x0 = window_begin(j, w, out_w), x1 = window_end(j, w, out_w);
        const double share = grad_out(ch, i, j) / static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) g(ch, y, xx) += share;
      }
    }
  return g;
}

Tensor group_sum(const Tensor& x, std::size_t group) {
  if (x.order() != 3 || group == 0 || x.shape()[0] % group != 0) throw ShapeError("group_sum: bad channel grouping");
  const std::size_t out_c = x.shape()[0] / group, plane = x.shape()[1] * x.shape()[2];
  Tensor out({out_c, x.shape()[1], x.shape()[2]});
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t i = 0; i < plane; ++i) out[o * plane + i] += x[(o * group + r) * plane + i];
  return out;
}

Tensor group_sum_backward(const Tensor& grad_out, std::size_t group) {
  const std::size_t out_c = grad_out.shape()[0], plane = grad_out.shape()[1] * grad_out.shape()[2];
  Tensor g({out_c * group, grad_out.shape()[1], grad_out.shape()[2]});
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t i = 0; i < plane; ++i) g[(o * group + r) * plane + i] = grad_out[o * plane + i];
  return g;
}

}  // namespace hyperadapt
