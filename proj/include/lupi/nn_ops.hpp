#pragma once

#include <cstddef>

#include "lupi/tensor.hpp"

namespace lupi::nn {

struct ConvParams {
  Tensor weights;  // [out_channels, in_channels, kH, kW]
  Tensor bias;     // [out_channels]
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// Geometry of the unit-weight transposed convolution that maps a conv layer's
// output back onto that layer's input grid. output_h/output_w are always the
// recorded input extents of the conv, never recomputed from the kernel.
struct DeconvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_h = 1;
  std::size_t output_w = 1;

  bool operator==(const DeconvGeometry&) const = default;
};

// floor((in + 2*pad - k)/stride) + 1, or 0 when the window does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

// Extents the deconvolution accepts as input, i.e. the conv output extents.
std::size_t deconv_input_h(const DeconvGeometry& g);
std::size_t deconv_input_w(const DeconvGeometry& g);

Tensor conv2d_forward(const Tensor& x, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor deconv_unit_forward(const Tensor& x, const DeconvGeometry& g);
Tensor deconv_unit_backward(const DeconvGeometry& g, const Tensor& grad_out);

// y = relu(conv2(relu(conv1(x))) + x); both convs stride 1 with "same" padding.
struct ResBlockParams {
  ConvParams conv1;
  ConvParams conv2;
};

struct ResBlockCache {
  Tensor pre1;    // conv1(x)
  Tensor act1;    // relu(pre1)
  Tensor presum;  // conv2(act1) + x
};

struct ResBlockGrads {
  Tensor input;
  ConvGrads conv1;
  ConvGrads conv2;
};

Tensor residual_block_forward(const Tensor& x, const ResBlockParams& p,
                              ResBlockCache* cache = nullptr);
ResBlockGrads residual_block_backward(const Tensor& x, const ResBlockParams& p,
                                      const ResBlockCache& cache, const Tensor& grad_out);

// Deconvolution geometry used by the visualization head to invert a block.
DeconvGeometry residual_block_geometry(const ResBlockParams& p, std::size_t in_h,
                                       std::size_t in_w);

Tensor global_avg_pool_forward(const Tensor& x);  // [C,H,W] -> [C]
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

struct LinearGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

Tensor linear_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);
LinearGrads linear_backward(const Tensor& x, const Tensor& weights, const Tensor& grad_out);

Tensor sigmoid_forward(const Tensor& x);
// Takes the forward output, not the input.
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

}  // namespace lupi::nn
