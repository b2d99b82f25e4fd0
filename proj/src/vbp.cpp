#include "lupi/vbp.hpp"

#include <string>

namespace lupi::vbp {

Tensor channel_average(const Tensor& f) {
  if (f.rank() != 3) throw ShapeError("channel_average: expected [C,H,W], got " + shape_str(f.shape()));
  const std::size_t C = f.dim(0), plane = f.dim(1) * f.dim(2);
  Tensor out({1, f.dim(1), f.dim(2)});
  for (std::size_t i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) acc += f[c * plane + i];
    out[i] = acc / static_cast<double>(C);
  }
  return out;
}

Tensor channel_average_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.shape() != Shape{1, input_shape[1], input_shape[2]})
    throw ShapeError("channel_average_backward: grad " + shape_str(grad_out.shape()) +
                     " incompatible with input " + shape_str(input_shape));
  const std::size_t C = input_shape[0], plane = input_shape[1] * input_shape[2];
  Tensor g(input_shape);
  const double inv = 1.0 / static_cast<double>(C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] = grad_out[i] * inv;
  return g;
}

namespace {

struct Extremes {
  std::size_t argmin = 0;
  std::size_t argmax = 0;
  double range = 0.0;
};

Extremes find_extremes(const Tensor& m) {
  Extremes e;
  for (std::size_t i = 1; i < m.size(); ++i) {
    if (m[i] < m[e.argmin]) e.argmin = i;
    if (m[i] > m[e.argmax]) e.argmax = i;
  }
  e.range = m[e.argmax] - m[e.argmin];
  return e;
}

}  // namespace

Tensor normalize_01(const Tensor& m) {
  const Extremes e = find_extremes(m);
  Tensor out = Tensor::zeros_like(m);
  if (!(e.range > kNormalizeEpsilon)) return out;
  const double lo = m[e.argmin];
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - lo) / e.range;
  return out;
}

// out_i = (m_i - m_a) / (m_b - m_a) with a = argmin, b = argmax. With
// S = sum(g) and T = sum(g * out):
//   dm = g / d,  dm[a] += (T - S) / d,  dm[b] -= T / d.
Tensor normalize_01_backward(const Tensor& m, const Tensor& grad_out) {
  require_same_shape(m, grad_out, "normalize_01_backward");
  const Extremes e = find_extremes(m);
  Tensor g = Tensor::zeros_like(m);
  if (!(e.range > kNormalizeEpsilon)) return g;
  const double lo = m[e.argmin];
  double s = 0.0, t = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    s += grad_out[i];
    t += grad_out[i] * ((m[i] - lo) / e.range);
    g[i] = grad_out[i] / e.range;
  }
  g[e.argmin] += (t - s) / e.range;
  g[e.argmax] -= t / e.range;
  return g;
}

void validate_trace(const ForwardTrace& trace) {
  if (trace.entries.empty()) throw ShapeError("vbp: empty forward trace");
  for (std::size_t l = 0; l < trace.entries.size(); ++l) {
    const auto& e = trace.entries[l];
    if (e.feature_map.rank() != 3)
      throw ShapeError("vbp: trace entry " + std::to_string(l) + " is not [C,H,W]");
    const std::size_t want_h = l == 0 ? trace.input_h : trace.entries[l - 1].feature_map.dim(1);
    const std::size_t want_w = l == 0 ? trace.input_w : trace.entries[l - 1].feature_map.dim(2);
    if (e.geometry.output_h != want_h || e.geometry.output_w != want_w)
      throw ShapeError("vbp: entry " + std::to_string(l) + " deconvolves to " +
                       std::to_string(e.geometry.output_h) + "x" +
                       std::to_string(e.geometry.output_w) + " but the previous grid is " +
                       std::to_string(want_h) + "x" + std::to_string(want_w));
    if (nn::deconv_input_h(e.geometry) != e.feature_map.dim(1) ||
        nn::deconv_input_w(e.geometry) != e.feature_map.dim(2))
      throw ShapeError("vbp: entry " + std::to_string(l) + " feature map " +
                       shape_str(e.feature_map.shape()) + " inconsistent with its geometry");
  }
}

namespace {

// Intermediates of the forward sweep, kept for the backward pass.
struct Sweep {
  std::vector<Tensor> averaged;   // A_l
  std::vector<Tensor> upsampled;  // U_l = deconv(P_l, g_l), l >= 1
  std::vector<Tensor> products;   // P_l
  Tensor projected;               // deconv(P_0, g_0)
};

Sweep run_sweep(const ForwardTrace& trace) {
  validate_trace(trace);
  const std::size_t n = trace.entries.size();
  Sweep s;
  s.averaged.reserve(n);
  for (const auto& e : trace.entries) s.averaged.push_back(channel_average(e.feature_map));
  s.upsampled.resize(n);
  s.products.resize(n);
  s.products[n - 1] = s.averaged[n - 1];
  for (std::size_t l = n - 1; l >= 1; --l) {
    s.upsampled[l] = nn::deconv_unit_forward(s.products[l], trace.entries[l].geometry);
    s.products[l - 1] = mul(s.upsampled[l], s.averaged[l - 1]);
  }
  s.projected = nn::deconv_unit_forward(s.products[0], trace.entries[0].geometry);
  return s;
}

}  // namespace

VisualizationMask vbp_forward(const ForwardTrace& trace) {
  Sweep s = run_sweep(trace);
  return VisualizationMask{normalize_01(s.projected)};
}

std::vector<Tensor> vbp_backward(const ForwardTrace& trace, const Tensor& grad_mask) {
  const Shape want{1, trace.input_h, trace.input_w};
  if (grad_mask.shape() != want)
    throw ShapeError("vbp_backward: grad_mask " + shape_str(grad_mask.shape()) +
                     " does not match input resolution " + shape_str(want));
  Sweep s = run_sweep(trace);
  const std::size_t n = trace.entries.size();

  Tensor g_proj = normalize_01_backward(s.projected, grad_mask);
  Tensor g_prod = nn::deconv_unit_backward(trace.entries[0].geometry, g_proj);  // dP_0

  std::vector<Tensor> g_avg(n);
  for (std::size_t l = 1; l < n; ++l) {
    // P_{l-1} = U_l * A_{l-1}
    g_avg[l - 1] = mul(g_prod, s.upsampled[l]);
    Tensor g_up = mul(g_prod, s.averaged[l - 1]);
    g_prod = nn::deconv_unit_backward(trace.entries[l].geometry, g_up);  // dP_l
  }
  g_avg[n - 1] = std::move(g_prod);

  std::vector<Tensor> grads;
  grads.reserve(n);
  for (std::size_t l = 0; l < n; ++l)
    grads.push_back(channel_average_backward(trace.entries[l].feature_map.shape(), g_avg[l]));
  return grads;
}

}  // namespace lupi::vbp
