#pragma once

#include <cstddef>
#include <vector>

#include "lupi/nn_ops.hpp"
#include "lupi/tensor.hpp"

namespace lupi::vbp {

struct TraceEntry {
  Tensor feature_map;           // post-ReLU [C,H,W]
  nn::DeconvGeometry geometry;  // maps this entry's grid onto the previous one
};

// One entry per conv layer and per residual block, shallowest first.
struct ForwardTrace {
  std::vector<TraceEntry> entries;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
};

// Input-resolution saliency map with values in [0,1].
struct VisualizationMask {
  Tensor values;  // [1,H,W]
};

inline constexpr double kNormalizeEpsilon = 1e-8;

Tensor channel_average(const Tensor& f);
Tensor channel_average_backward(const Shape& input_shape, const Tensor& grad_out);

Tensor normalize_01(const Tensor& m);
// Min and max are differentiated through their first attaining flat index.
Tensor normalize_01_backward(const Tensor& m, const Tensor& grad_out);

// Throws ShapeError when a deconvolution does not land on the next entry's grid.
void validate_trace(const ForwardTrace& trace);

VisualizationMask vbp_forward(const ForwardTrace& trace);

// Gradient of a scalar loss with respect to each trace entry's feature map,
// given the loss gradient with respect to the mask.
std::vector<Tensor> vbp_backward(const ForwardTrace& trace, const Tensor& grad_mask);

}  // namespace lupi::vbp
