#pragma once

#include <optional>
#include <string_view>

#include "lupi/tensor.hpp"

namespace lupi::loss {

inline constexpr double kProbEpsilon = 1e-12;

enum class FocusMode { regular, full, half };

FocusMode parse_focus_mode(std::string_view s);
std::string_view to_string(FocusMode m);

struct LossValue {
  double total = 0.0;
  double classification = 0.0;
  double privileged = 0.0;
  double lambda = 0.0;
};

// Sum |vis - seg|: penalizes both missing and extra attention.
double lpi_full(const Tensor& vis, const Tensor& seg);
// Sum |vis - vis*seg|: penalizes attention outside the segmented region only.
double lpi_half(const Tensor& vis, const Tensor& seg);

// d/dvis of the two terms, with sign(0) = 0.
Tensor lpi_full_grad(const Tensor& vis, const Tensor& seg);
Tensor lpi_half_grad(const Tensor& vis, const Tensor& seg);

// Mean over classes of the binary cross-entropy, probabilities clamped to
// [kProbEpsilon, 1 - kProbEpsilon].
double bce_multilabel(const Tensor& probs, const Tensor& labels);
// Zero where the clamp is active.
Tensor bce_multilabel_grad(const Tensor& probs, const Tensor& labels);

LossValue total_loss(const Tensor& probs, const Tensor& labels, const Tensor* vis,
                     const Tensor* seg, FocusMode mode, double lambda);

double privileged_loss(FocusMode mode, const Tensor& vis, const Tensor& seg);
Tensor privileged_loss_grad(FocusMode mode, const Tensor& vis, const Tensor& seg);

}  // namespace lupi::loss
