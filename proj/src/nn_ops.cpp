#include "lupi/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lupi::nn {

namespace {

using Index = std::ptrdiff_t;

void check_conv_shapes(const Tensor& x, const ConvParams& p) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (p.weights.rank() != 4)
    throw ShapeError("conv2d: weights must be [O,I,kH,kW], got " + shape_str(p.weights.shape()));
  if (p.bias.shape() != Shape{p.out_channels()})
    throw ShapeError("conv2d: bias shape " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(p.out_channels()) + " output channels");
  if (p.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (x.dim(0) != p.in_channels())
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(0)) +
                     " channels but weights expect " + std::to_string(p.in_channels()));
  if (conv_output_extent(x.dim(1), p.kernel_h(), p.stride, p.padding) == 0 ||
      conv_output_extent(x.dim(2), p.kernel_w(), p.stride, p.padding) == 0)
    throw ShapeError("conv2d: nonpositive output extent for input " + shape_str(x.shape()) +
                     " and kernel " + shape_str(p.weights.shape()));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0 || in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t deconv_input_h(const DeconvGeometry& g) {
  return conv_output_extent(g.output_h, g.kernel_h, g.stride, g.padding);
}

std::size_t deconv_input_w(const DeconvGeometry& g) {
  return conv_output_extent(g.output_w, g.kernel_w, g.stride, g.padding);
}

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  check_conv_shapes(x, p);
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index O = p.out_channels(), KH = p.kernel_h(), KW = p.kernel_w();
  const Index S = p.stride, P = p.padding;
  const Index OH = conv_output_extent(H, KH, S, P), OW = conv_output_extent(W, KW, S, P);

  Tensor out({static_cast<std::size_t>(O), static_cast<std::size_t>(OH),
              static_cast<std::size_t>(OW)});
  const double* xs = x.data().data();
  const double* ws = p.weights.data().data();
  const double* bs = p.bias.data().data();
  double* os = out.data().data();

#pragma omp parallel for collapse(2) schedule(static) if (O * OH * OW * C * KH * KW > 32768)
  for (Index o = 0; o < O; ++o) {
    for (Index oy = 0; oy < OH; ++oy) {
      // Taps that land inside the image; same summation order as skipping the rest.
      const Index y0 = oy * S - P;
      const Index ky_lo = std::max<Index>(0, -y0), ky_hi = std::min<Index>(KH, H - y0);
      for (Index ox = 0; ox < OW; ++ox) {
        const Index x0 = ox * S - P;
        const Index kx_lo = std::max<Index>(0, -x0), kx_hi = std::min<Index>(KW, W - x0);
        double acc = bs[o];
        for (Index c = 0; c < C; ++c) {
          for (Index ky = ky_lo; ky < ky_hi; ++ky) {
            const Index row = (c * H + y0 + ky) * W + x0;
            const double* wrow = ws + ((o * C + c) * KH + ky) * KW;
            for (Index kx = kx_lo; kx < kx_hi; ++kx) acc += wrow[kx] * xs[row + kx];
          }
        }
        os[(o * OH + oy) * OW + ox] = acc;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  check_conv_shapes(x, p);
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index O = p.out_channels(), KH = p.kernel_h(), KW = p.kernel_w();
  const Index S = p.stride, P = p.padding;
  const Index OH = conv_output_extent(H, KH, S, P), OW = conv_output_extent(W, KW, S, P);
  const Shape expected{static_cast<std::size_t>(O), static_cast<std::size_t>(OH),
                       static_cast<std::size_t>(OW)};
  if (grad_out.shape() != expected)
    throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) +
                     " does not match output shape " + shape_str(expected));

  ConvGrads g{Tensor::zeros_like(x), Tensor::zeros_like(p.weights), Tensor::zeros_like(p.bias)};
  const double* xs = x.data().data();
  const double* ws = p.weights.data().data();
  const double* gs = grad_out.data().data();
  double* gx = g.input.data().data();
  double* gw = g.weights.data().data();
  double* gb = g.bias.data().data();
  const bool par = O * OH * OW * C * KH * KW > 32768;

  // Weight and bias gradients: each output channel owns its slice.
#pragma omp parallel for schedule(static) if (par)
  for (Index o = 0; o < O; ++o) {
    double bacc = 0.0;
    for (Index i = 0; i < OH * OW; ++i) bacc += gs[o * OH * OW + i];
    gb[o] = bacc;
    for (Index c = 0; c < C; ++c) {
      for (Index ky = 0; ky < KH; ++ky) {
        for (Index kx = 0; kx < KW; ++kx) {
          double acc = 0.0;
          for (Index oy = 0; oy < OH; ++oy) {
            const Index iy = oy * S - P + ky;
            if (iy < 0 || iy >= H) continue;
            for (Index ox = 0; ox < OW; ++ox) {
              const Index ix = ox * S - P + kx;
              if (ix < 0 || ix >= W) continue;
              acc += gs[(o * OH + oy) * OW + ox] * xs[(c * H + iy) * W + ix];
            }
          }
          gw[((o * C + c) * KH + ky) * KW + kx] = acc;
        }
      }
    }
  }

  // Input gradient: each input channel owns its plane, scatter order is fixed.
#pragma omp parallel for schedule(static) if (par)
  for (Index c = 0; c < C; ++c) {
    for (Index o = 0; o < O; ++o) {
      for (Index oy = 0; oy < OH; ++oy) {
        for (Index ox = 0; ox < OW; ++ox) {
          const double go = gs[(o * OH + oy) * OW + ox];
          if (go == 0.0) continue;
          for (Index ky = 0; ky < KH; ++ky) {
            const Index iy = oy * S - P + ky;
            if (iy < 0 || iy >= H) continue;
            for (Index kx = 0; kx < KW; ++kx) {
              const Index ix = ox * S - P + kx;
              if (ix < 0 || ix >= W) continue;
              gx[(c * H + iy) * W + ix] += go * ws[((o * C + c) * KH + ky) * KW + kx];
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x[i] > 0.0)) g[i] = 0.0;
  return g;
}

namespace {

void check_deconv(const Tensor& x, const DeconvGeometry& g) {
  if (g.stride == 0 || g.kernel_h == 0 || g.kernel_w == 0)
    throw ShapeError("deconv: kernel and stride must be positive");
  const std::size_t h = deconv_input_h(g), w = deconv_input_w(g);
  if (h == 0 || w == 0 || x.shape() != Shape{1, h, w})
    throw ShapeError("deconv: input " + shape_str(x.shape()) +
                     " is inconsistent with geometry producing " + std::to_string(g.output_h) +
                     "x" + std::to_string(g.output_w) + " (expected [1," + std::to_string(h) +
                     "," + std::to_string(w) + "])");
}

// Input indices i whose window [i*s - p, i*s - p + k) covers output row y.
inline void covering_range(Index y, Index k, Index s, Index p, Index n, Index& lo, Index& hi) {
  // i*s <= y + p  and  i*s > y + p - k
  const Index top = y + p;
  hi = top / s;
  const Index t = top - k + 1;
  lo = t <= 0 ? 0 : (t + s - 1) / s;
  if (hi > n - 1) hi = n - 1;
}

}  // namespace

// Gather form of the scatter: out[y,x] sums every input whose window covers
// (y,x). Summation order per output pixel is fixed (row-major over inputs).
Tensor deconv_unit_forward(const Tensor& x, const DeconvGeometry& g) {
  check_deconv(x, g);
  const Index h = x.dim(1), w = x.dim(2);
  const Index OH = g.output_h, OW = g.output_w;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  Tensor out({1, g.output_h, g.output_w});
  const double* xs = x.data().data();
  double* os = out.data().data();
#pragma omp parallel for schedule(static) if (OH * OW * KH * KW > 65536)
  for (Index y = 0; y < OH; ++y) {
    Index ilo, ihi;
    covering_range(y, KH, S, P, h, ilo, ihi);
    for (Index xo = 0; xo < OW; ++xo) {
      Index jlo, jhi;
      covering_range(xo, KW, S, P, w, jlo, jhi);
      double acc = 0.0;
      for (Index i = ilo; i <= ihi; ++i)
        for (Index j = jlo; j <= jhi; ++j) acc += xs[i * w + j];
      os[y * OW + xo] = acc;
    }
  }
  return out;
}

Tensor deconv_unit_backward(const DeconvGeometry& g, const Tensor& grad_out) {
  if (grad_out.shape() != Shape{1, g.output_h, g.output_w})
    throw ShapeError("deconv_backward: grad_out shape " + shape_str(grad_out.shape()) +
                     " does not match geometry output [1," + std::to_string(g.output_h) + "," +
                     std::to_string(g.output_w) + "]");
  const std::size_t h = deconv_input_h(g), w = deconv_input_w(g);
  if (h == 0 || w == 0) throw ShapeError("deconv_backward: degenerate geometry");
  const Index OH = g.output_h, OW = g.output_w;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  Tensor gx({1, h, w});
  const double* gs = grad_out.data().data();
  double* gxs = gx.data().data();
  const Index H = h, Wd = w;
#pragma omp parallel for schedule(static) if (H * Wd * KH * KW > 65536)
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < Wd; ++j) {
      double acc = 0.0;
      for (Index ky = 0; ky < KH; ++ky) {
        const Index y = i * S - P + ky;
        if (y < 0 || y >= OH) continue;
        for (Index kx = 0; kx < KW; ++kx) {
          const Index xo = j * S - P + kx;
          if (xo < 0 || xo >= OW) continue;
          acc += gs[y * OW + xo];
        }
      }
      gxs[i * Wd + j] = acc;
    }
  }
  return gx;
}

namespace {

void check_block(const Tensor& x, const ResBlockParams& p) {
  const auto& c1 = p.conv1;
  const auto& c2 = p.conv2;
  if (c1.stride != 1 || c2.stride != 1)
    throw ShapeError("residual block: only stride-1 convolutions are supported");
  if (c1.kernel_h() != 2 * c1.padding + 1 || c1.kernel_w() != 2 * c1.padding + 1 ||
      c2.kernel_h() != 2 * c2.padding + 1 || c2.kernel_w() != 2 * c2.padding + 1)
    throw ShapeError("residual block: convolutions must use odd kernels with same padding");
  if (x.rank() != 3 || c1.in_channels() != x.dim(0) || c1.out_channels() != x.dim(0) ||
      c2.in_channels() != x.dim(0) || c2.out_channels() != x.dim(0))
    throw ShapeError("residual block: channel mismatch between input " + shape_str(x.shape()) +
                     " and block weights " + shape_str(c1.weights.shape()) + ", " +
                     shape_str(c2.weights.shape()));
}

}  // namespace

Tensor residual_block_forward(const Tensor& x, const ResBlockParams& p, ResBlockCache* cache) {
  check_block(x, p);
  Tensor pre1 = conv2d_forward(x, p.conv1);
  Tensor act1 = relu_forward(pre1);
  Tensor presum = conv2d_forward(act1, p.conv2);
  presum += x;
  Tensor y = relu_forward(presum);
  if (cache) {
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->presum = std::move(presum);
  }
  return y;
}

ResBlockGrads residual_block_backward(const Tensor& x, const ResBlockParams& p,
                                      const ResBlockCache& cache, const Tensor& grad_out) {
  check_block(x, p);
  require_same_shape(x, grad_out, "residual_block_backward");
  Tensor gsum = relu_backward(cache.presum, grad_out);
  ConvGrads g2 = conv2d_backward(cache.act1, p.conv2, gsum);
  Tensor gpre1 = relu_backward(cache.pre1, g2.input);
  ConvGrads g1 = conv2d_backward(x, p.conv1, gpre1);
  Tensor gx = gsum;
  gx += g1.input;
  return ResBlockGrads{std::move(gx), std::move(g1), std::move(g2)};
}

DeconvGeometry residual_block_geometry(const ResBlockParams& p, std::size_t in_h,
                                       std::size_t in_w) {
  return DeconvGeometry{p.conv1.kernel_h(), p.conv1.kernel_w(), p.conv1.stride,
                        p.conv1.padding,    in_h,              in_w};
}

Tensor global_avg_pool_forward(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: expected [C,H,W], got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[c * plane + i];
    out[c] = acc / static_cast<double>(plane);
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.shape() != Shape{input_shape[0]})
    throw ShapeError("global_avg_pool_backward: grad_out " + shape_str(grad_out.shape()) +
                     " incompatible with input " + shape_str(input_shape));
  const std::size_t plane = input_shape[1] * input_shape[2];
  Tensor g(input_shape);
  for (std::size_t c = 0; c < input_shape[0]; ++c) {
    const double v = grad_out[c] / static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] = v;
  }
  return g;
}

Tensor linear_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || x.rank() != 1 || weights.dim(1) != x.dim(0) ||
      bias.shape() != Shape{weights.dim(0)})
    throw ShapeError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                     " W=" + shape_str(weights.shape()) + " b=" + shape_str(bias.shape()));
  const std::size_t K = weights.dim(0), N = weights.dim(1);
  Tensor out({K});
  for (std::size_t k = 0; k < K; ++k) {
    double acc = bias[k];
    for (std::size_t n = 0; n < N; ++n) acc += weights[k * N + n] * x[n];
    out[k] = acc;
  }
  return out;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out) {
  if (weights.rank() != 2 || x.rank() != 1 || weights.dim(1) != x.dim(0) ||
      grad_out.shape() != Shape{weights.dim(0)})
    throw ShapeError("linear_backward: incompatible shapes x=" + shape_str(x.shape()) +
                     " W=" + shape_str(weights.shape()) + " grad=" + shape_str(grad_out.shape()));
  const std::size_t K = weights.dim(0), N = weights.dim(1);
  LinearGrads g{Tensor({N}), Tensor({K, N}), grad_out};
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t n = 0; n < N; ++n) {
      g.weights[k * N + n] = grad_out[k] * x[n];
      g.input[n] += weights[k * N + n] * grad_out[k];
    }
  return g;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
  return g;
}

}  // namespace lupi::nn
