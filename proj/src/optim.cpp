#include "lupi/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lupi::optim {

OptimState OptimState::for_params(std::span<const Tensor* const> params) {
  OptimState s;
  for (const Tensor* p : params) {
    s.velocity.push_back(Tensor::zeros_like(*p));
    s.first_moment.push_back(Tensor::zeros_like(*p));
    s.second_moment.push_back(Tensor::zeros_like(*p));
  }
  return s;
}

namespace {

void check_slots(std::span<Tensor* const> params, std::span<const Tensor> grads,
                 const std::vector<Tensor>& slots, const char* who) {
  if (params.size() != grads.size() || params.size() != slots.size())
    throw ShapeError(std::string(who) + ": " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(slots.size()) +
                     " state slots");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], who);
    require_same_shape(*params[i], slots[i], who);
  }
}

}  // namespace

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
              const SgdConfig& cfg) {
  check_slots(params, grads, state.velocity, "sgd_step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto v = state.velocity[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = cfg.momentum * v[j] + g[j];
      theta[j] -= cfg.lr * v[j];
    }
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
               const AdamConfig& cfg) {
  check_slots(params, grads, state.first_moment, "adam_step");
  check_slots(params, grads, state.second_moment, "adam_step");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      theta[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

DecayUnit parse_decay_unit(std::string_view s) {
  if (s == "steps") return DecayUnit::steps;
  if (s == "epochs") return DecayUnit::epochs;
  throw std::invalid_argument("decay unit must be 'steps' or 'epochs', got '" + std::string(s) + "'");
}

void ScheduleConfig::validate() const {
  if (!(adam_lr > 0.0)) throw std::invalid_argument("adam learning rate must be positive");
  if (!(sgd_lr > 0.0)) throw std::invalid_argument("sgd learning rate must be positive");
  if (decay_interval <= 0) throw std::invalid_argument("decay interval must be positive");
  if (!(decay_factor > 0.0)) throw std::invalid_argument("decay factor must be positive");
  if (lr_min < 0.0) throw std::invalid_argument("lr_min must be nonnegative");
  if (patience < 0) throw std::invalid_argument("patience must be nonnegative");
}

ScheduleDecision schedule_step(const ScheduleConfig& cfg, std::int64_t global_step,
                               std::int64_t epoch, ScheduleState& state) {
  cfg.validate();
  if (!state.switched && global_step >= cfg.switch_step) {
    state.switched = true;
    state.switch_step = cfg.switch_step;
    state.switch_epoch = epoch;
  }
  if (!state.switched) return {OptimizerKind::adam, cfg.adam_lr};
  const std::int64_t elapsed = cfg.decay_unit == DecayUnit::steps ? global_step - state.switch_step
                                                                   : epoch - state.switch_epoch;
  const auto intervals = std::max<std::int64_t>(elapsed, 0) / cfg.decay_interval;
  const double lr = cfg.sgd_lr * std::pow(cfg.decay_factor, static_cast<double>(intervals));
  return {OptimizerKind::sgd, std::max(lr, cfg.lr_min)};
}

void schedule_observe_validation(const ScheduleConfig& cfg, double metric, std::int64_t global_step,
                                 std::int64_t epoch, ScheduleState& state) {
  if (state.have_last_metric && metric < state.last_metric)
    ++state.worse_streak;
  else
    state.worse_streak = 0;
  state.have_last_metric = true;
  state.last_metric = metric;
  if (cfg.patience > 0 && !state.switched && state.worse_streak >= cfg.patience) {
    state.switched = true;
    state.switch_step = global_step;
    state.switch_epoch = epoch;
  }
}

}  // namespace lupi::optim
