#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lupi/data.hpp"
#include "lupi/losses.hpp"
#include "lupi/metrics.hpp"
#include "lupi/model.hpp"
#include "lupi/optim.hpp"

namespace lupi::train {

enum class Regime { regular, added_seg_mask, seg_mole, full_focus, half_focus };

Regime parse_regime(std::string_view s);
std::string_view to_string(Regime r);
bool regime_needs_masks(Regime r);
loss::FocusMode focus_mode(Regime r);

struct TrainConfig {
  Regime regime = Regime::regular;
  double lambda = 1.0;
  std::uint64_t seed = 1;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  optim::ScheduleConfig schedule;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::int64_t step = 0;
  double train_loss = 0.0;
  double cls_loss = 0.0;
  double pi_loss = 0.0;
  double lr = 0.0;
  double val_map = 0.0;  // NaN without a validation split
};

std::string format_log_line(const EpochLog& e);

// The network input a regime sees at training time.
struct TrainingInput {
  Tensor image;
  const Tensor* aux_mask = nullptr;
};
TrainingInput training_input(Regime regime, const data::Sample& s);

struct SampleGradient {
  model::ParamGrads grads;
  loss::LossValue loss;
};

// Loss and parameter gradient for one sample under the given regime.
SampleGradient sample_gradient(const model::Network& net, const data::Sample& s, Regime regime,
                               double lambda);

// Architecture for a dataset: input shape and class count are taken from the
// samples, plus the extra mask channel for added-seg-mask.
model::NetworkSpec make_spec(const std::vector<model::LayerSpec>& layers, const data::Sample& example,
                             Regime regime);

struct TrainResult {
  model::Network net;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Deterministic in (spec, samples, cfg). Batch gradient is the mean over the
// batch; per-sample work runs in parallel and is reduced in sample order.
TrainResult train(const model::NetworkSpec& spec, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Label prediction never sees the mask; masks (when present) only feed the
// IoU and outside-energy diagnostics.
metrics::EvalReport evaluate(const model::Network& net, const std::vector<data::Sample>& samples);

vbp::VisualizationMask visualization_mask(const model::Network& net, const Tensor& image);

// Red channel becomes clamp(red + mask, 0, 1); grayscale images are replicated to RGB.
Tensor red_overlay(const Tensor& image, const Tensor& mask);

}  // namespace lupi::train
