#include "lupi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lupi::loss {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Neumaier-compensated sum. The raw-sum losses reach tens on small images, so
// plain accumulation leaves enough rounding to swamp central differences.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = s_ + v;
    c_ += std::fabs(s_) >= std::fabs(v) ? (s_ - t) + v : (v - t) + s_;
    s_ = t;
  }
  double value() const { return s_ + c_; }

 private:
  double s_ = 0.0, c_ = 0.0;
};

}  // namespace

FocusMode parse_focus_mode(std::string_view s) {
  if (s == "regular") return FocusMode::regular;
  if (s == "full") return FocusMode::full;
  if (s == "half") return FocusMode::half;
  throw std::invalid_argument("unknown focus mode '" + std::string(s) + "'");
}

std::string_view to_string(FocusMode m) {
  switch (m) {
    case FocusMode::regular: return "regular";
    case FocusMode::full: return "full";
    case FocusMode::half: return "half";
  }
  return "?";
}

double lpi_full(const Tensor& vis, const Tensor& seg) {
  require_same_shape(vis, seg, "lpi_full");
  CompensatedSum s;
  for (std::size_t i = 0; i < vis.size(); ++i) s.add(std::fabs(vis[i] - seg[i]));
  return s.value();
}

double lpi_half(const Tensor& vis, const Tensor& seg) {
  require_same_shape(vis, seg, "lpi_half");
  CompensatedSum s;
  for (std::size_t i = 0; i < vis.size(); ++i) s.add(std::fabs(vis[i] - vis[i] * seg[i]));
  return s.value();
}

Tensor lpi_full_grad(const Tensor& vis, const Tensor& seg) {
  require_same_shape(vis, seg, "lpi_full_grad");
  Tensor g = Tensor::zeros_like(vis);
  for (std::size_t i = 0; i < vis.size(); ++i) g[i] = sign(vis[i] - seg[i]);
  return g;
}

Tensor lpi_half_grad(const Tensor& vis, const Tensor& seg) {
  require_same_shape(vis, seg, "lpi_half_grad");
  Tensor g = Tensor::zeros_like(vis);
  for (std::size_t i = 0; i < vis.size(); ++i) {
    const double outside = 1.0 - seg[i];
    g[i] = sign(vis[i] * outside) * outside;
  }
  return g;
}

double bce_multilabel(const Tensor& probs, const Tensor& labels) {
  require_same_shape(probs, labels, "bce_multilabel");
  double s = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = std::clamp(probs[k], kProbEpsilon, 1.0 - kProbEpsilon);
    const double y = labels[k];
    s += -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

Tensor bce_multilabel_grad(const Tensor& probs, const Tensor& labels) {
  require_same_shape(probs, labels, "bce_multilabel_grad");
  Tensor g = Tensor::zeros_like(probs);
  const double inv_k = 1.0 / static_cast<double>(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = probs[k];
    if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) continue;
    const double y = labels[k];
    g[k] = (-y / p + (1.0 - y) / (1.0 - p)) * inv_k;
  }
  return g;
}

double privileged_loss(FocusMode mode, const Tensor& vis, const Tensor& seg) {
  switch (mode) {
    case FocusMode::full: return lpi_full(vis, seg);
    case FocusMode::half: return lpi_half(vis, seg);
    case FocusMode::regular: break;
  }
  return 0.0;
}

Tensor privileged_loss_grad(FocusMode mode, const Tensor& vis, const Tensor& seg) {
  switch (mode) {
    case FocusMode::full: return lpi_full_grad(vis, seg);
    case FocusMode::half: return lpi_half_grad(vis, seg);
    case FocusMode::regular: break;
  }
  return Tensor::zeros_like(vis);
}

LossValue total_loss(const Tensor& probs, const Tensor& labels, const Tensor* vis,
                     const Tensor* seg, FocusMode mode, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda))
    throw std::invalid_argument("lambda must be finite and nonnegative");
  LossValue v;
  v.lambda = lambda;
  v.classification = bce_multilabel(probs, labels);
  if (mode != FocusMode::regular) {
    if (!vis || !seg)
      throw std::invalid_argument(std::string("focus mode '") + std::string(to_string(mode)) +
                                  "' requires both a visualization mask and a segmentation mask");
    v.privileged = privileged_loss(mode, *vis, *seg);
  }
  v.total = v.classification + lambda * v.privileged;
  return v;
}

}  // namespace lupi::loss
