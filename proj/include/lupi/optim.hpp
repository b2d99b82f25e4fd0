#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "lupi/tensor.hpp"

namespace lupi::optim {

struct SgdConfig {
  double lr = 1e-4;
  double momentum = 0.9;
};

// Defaults: beta1 0.9, beta2 0.99.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<Tensor> velocity;     // SGD momentum buffers
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t t = 0;               // Adam timestep

  // Zero slots shaped like params.
  static OptimState for_params(std::span<const Tensor* const> params);
};

// v <- mu*v + g; theta <- theta - lr*v
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
              const SgdConfig& cfg);

// Bias-corrected Adam.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
               const AdamConfig& cfg);

enum class OptimizerKind { adam, sgd };
enum class DecayUnit { steps, epochs };

std::string_view to_string(OptimizerKind k);
DecayUnit parse_decay_unit(std::string_view s);

// Adam until switch_step (or until the validation patience rule fires), then
// SGD whose learning rate is multiplied by decay_factor every decay_interval
// units since the switch, never below lr_min.
struct ScheduleConfig {
  std::int64_t switch_step = std::numeric_limits<std::int64_t>::max();
  double adam_lr = 1e-4;
  double sgd_lr = 1e-4;
  double decay_factor = 1.0;
  std::int64_t decay_interval = 30;
  DecayUnit decay_unit = DecayUnit::epochs;
  double lr_min = 0.0;
  int patience = 3;  // 0 disables the validation-driven switch

  void validate() const;
};

struct ScheduleState {
  bool switched = false;
  std::int64_t switch_step = 0;
  std::int64_t switch_epoch = 0;
  bool have_last_metric = false;
  double last_metric = 0.0;
  int worse_streak = 0;
};

struct ScheduleDecision {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.0;
};

ScheduleDecision schedule_step(const ScheduleConfig& cfg, std::int64_t global_step,
                               std::int64_t epoch, ScheduleState& state);

// Feeds a validation metric where larger is better (e.g. mAP). Switches to
// SGD once it has fallen for `patience` consecutive evaluations.
void schedule_observe_validation(const ScheduleConfig& cfg, double metric, std::int64_t global_step,
                                 std::int64_t epoch, ScheduleState& state);

}  // namespace lupi::optim
