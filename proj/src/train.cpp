#include "lupi/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "lupi/vbp.hpp"

namespace lupi::train {

Regime parse_regime(std::string_view s) {
  if (s == "regular") return Regime::regular;
  if (s == "added-seg-mask") return Regime::added_seg_mask;
  if (s == "seg-mole") return Regime::seg_mole;
  if (s == "full-focus") return Regime::full_focus;
  if (s == "half-focus") return Regime::half_focus;
  throw std::invalid_argument("unknown regime '" + std::string(s) +
                              "' (expected regular, added-seg-mask, seg-mole, full-focus or half-focus)");
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::regular: return "regular";
    case Regime::added_seg_mask: return "added-seg-mask";
    case Regime::seg_mole: return "seg-mole";
    case Regime::full_focus: return "full-focus";
    case Regime::half_focus: return "half-focus";
  }
  return "?";
}

bool regime_needs_masks(Regime r) { return r != Regime::regular; }

loss::FocusMode focus_mode(Regime r) {
  if (r == Regime::full_focus) return loss::FocusMode::full;
  if (r == Regime::half_focus) return loss::FocusMode::half;
  return loss::FocusMode::regular;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  schedule.validate();
}

std::string format_log_line(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", e.epoch,
                static_cast<long long>(e.step), e.train_loss, e.cls_loss, e.pi_loss, e.lr, e.val_map);
  return buf;
}

namespace {

Tensor mask_image(const Tensor& image, const Tensor& mask) {
  Tensor out = image;
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= mask[i];
  return out;
}

void require_mask(const data::Sample& s, Regime regime) {
  if (s.seg_mask.empty())
    throw TrainingError("regime " + std::string(to_string(regime)) + " needs a segmentation mask for sample " +
                        s.id);
}

}  // namespace

TrainingInput training_input(Regime regime, const data::Sample& s) {
  switch (regime) {
    case Regime::added_seg_mask:
      require_mask(s, regime);
      return {s.image, &s.seg_mask};
    case Regime::seg_mole:
      require_mask(s, regime);
      return {mask_image(s.image, s.seg_mask), nullptr};
    default:
      return {s.image, nullptr};
  }
}

SampleGradient sample_gradient(const model::Network& net, const data::Sample& s, Regime regime, double lambda) {
  const TrainingInput in = training_input(regime, s);
  const model::ForwardTape tape = model::forward_tape(net, in.image, in.aux_mask);
  const loss::FocusMode mode = focus_mode(regime);

  SampleGradient out;
  const Tensor grad_probs = loss::bce_multilabel_grad(tape.probs, s.labels);
  if (mode == loss::FocusMode::regular) {
    out.loss = loss::total_loss(tape.probs, s.labels, nullptr, nullptr, mode, lambda);
    out.grads = model::backward(net, tape, grad_probs, nullptr);
    return out;
  }
  require_mask(s, regime);
  const vbp::VisualizationMask vis = vbp::vbp_forward(tape.trace);
  out.loss = loss::total_loss(tape.probs, s.labels, &vis.values, &s.seg_mask, mode, lambda);
  Tensor grad_mask = loss::privileged_loss_grad(mode, vis.values, s.seg_mask);
  grad_mask *= lambda;
  const std::vector<Tensor> trace_grads = vbp::vbp_backward(tape.trace, grad_mask);
  out.grads = model::backward(net, tape, grad_probs, &trace_grads);
  return out;
}

model::NetworkSpec make_spec(const std::vector<model::LayerSpec>& layers, const data::Sample& example,
                             Regime regime) {
  model::NetworkSpec spec;
  spec.mask_channel = regime == Regime::added_seg_mask;
  spec.in_channels = example.image.dim(0) + (spec.mask_channel ? 1 : 0);
  spec.in_h = example.image.dim(1);
  spec.in_w = example.image.dim(2);
  spec.num_classes = example.labels.size();
  spec.layers = layers;
  spec.validate();
  return spec;
}

namespace {

// Fisher-Yates with a fixed-width generator so the order is reproducible.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const std::size_t j = std::min(i - 1, static_cast<std::size_t>(u * static_cast<double>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

bool grads_finite(const model::ParamGrads& g) {
  for (const auto& t : g)
    if (!all_finite(t)) return false;
  return true;
}

double validation_map(const model::Network& net, const std::vector<data::Sample>& val) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  metrics::ScoreMatrix scores(val.size());
  metrics::LabelMatrix labels(val.size());
  const auto n = static_cast<std::ptrdiff_t>(val.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Tensor p = model::predict(net, val[i].image);
    scores[i].assign(p.data().begin(), p.data().end());
    for (double y : val[i].labels.data()) labels[i].push_back(y != 0.0 ? 1 : 0);
  }
  return metrics::build_report(scores, labels, {}, {}).mean_ap;
}

}  // namespace

TrainResult train(const model::NetworkSpec& spec, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw TrainingError("empty training split");
  if (spec.mask_channel != (cfg.regime == Regime::added_seg_mask))
    throw TrainingError("network mask channel does not match regime " + std::string(to_string(cfg.regime)));

  TrainResult result{model::Network::build(spec, cfg.seed), {}};
  model::Network& net = result.net;
  std::vector<Tensor*> params = net.parameters();
  optim::OptimState adam_state = optim::OptimState::for_params(net.parameters());
  optim::OptimState sgd_state = optim::OptimState::for_params(net.parameters());
  optim::ScheduleState sched;
  std::mt19937_64 order_rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::int64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, order_rng);
    double sum_total = 0.0, sum_cls = 0.0, sum_pi = 0.0;
    double lr = 0.0;
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t bs = end - begin;
      std::vector<SampleGradient> per(bs);
      std::string error;
      const auto nb = static_cast<std::ptrdiff_t>(bs);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < nb; ++i) {
        try {
          per[i] = sample_gradient(net, train_set[order[begin + i]], cfg.regime, cfg.lambda);
        } catch (const std::exception& e) {
#pragma omp critical
          if (error.empty()) error = e.what();
        }
      }
      if (!error.empty()) throw TrainingError(error);

      model::ParamGrads grads = std::move(per[0].grads);
      double b_total = per[0].loss.total, b_cls = per[0].loss.classification, b_pi = per[0].loss.privileged;
      for (std::size_t i = 1; i < bs; ++i) {
        for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += per[i].grads[p];
        b_total += per[i].loss.total;
        b_cls += per[i].loss.classification;
        b_pi += per[i].loss.privileged;
      }
      const double inv = 1.0 / static_cast<double>(bs);
      for (auto& g : grads) g *= inv;
      if (!std::isfinite(b_total) || !grads_finite(grads)) {
        std::string ids;
        for (std::size_t i = begin; i < end; ++i) ids += (ids.empty() ? "" : ",") + train_set[order[i]].id;
        throw TrainingError("non-finite loss or gradient in epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch) + " (samples " + ids + ")");
      }
      sum_total += b_total;
      sum_cls += b_cls;
      sum_pi += b_pi;

      const auto decision = optim::schedule_step(cfg.schedule, step, static_cast<std::int64_t>(epoch), sched);
      lr = decision.lr;
      if (decision.optimizer == optim::OptimizerKind::adam)
        optim::adam_step(params, grads, adam_state, {lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
      else
        optim::sgd_step(params, grads, sgd_state, {lr, cfg.momentum});
      ++step;
    }

    EpochLog log;
    log.epoch = epoch;
    log.step = step;
    const double n = static_cast<double>(train_set.size());
    log.train_loss = sum_total / n;
    log.cls_loss = sum_cls / n;
    log.pi_loss = sum_pi / n;
    log.lr = lr;
    log.val_map = validation_map(net, val_set);
    if (!val_set.empty() && std::isfinite(log.val_map))
      optim::schedule_observe_validation(cfg.schedule, log.val_map, step, static_cast<std::int64_t>(epoch), sched);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

metrics::EvalReport evaluate(const model::Network& net, const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
  const std::size_t n = samples.size();
  metrics::ScoreMatrix scores(n);
  metrics::LabelMatrix labels(n);
  std::vector<double> ious, energies;
  const bool with_masks = !samples.front().seg_mask.empty();
  if (with_masks) ious.resize(n), energies.resize(n);
  const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    const auto& s = samples[i];
    Tensor probs;
    if (with_masks) {
      auto fr = model::forward_with_trace(net, s.image);
      const auto vis = vbp::vbp_forward(fr.trace);
      ious[i] = metrics::mask_iou(vis.values, s.seg_mask);
      energies[i] = metrics::outside_mask_energy(vis.values, s.seg_mask);
      probs = std::move(fr.probs);
    } else {
      probs = model::predict(net, s.image);
    }
    scores[i].assign(probs.data().begin(), probs.data().end());
    for (double y : s.labels.data()) labels[i].push_back(y != 0.0 ? 1 : 0);
  }
  return metrics::build_report(scores, labels, ious, energies);
}

vbp::VisualizationMask visualization_mask(const model::Network& net, const Tensor& image) {
  return vbp::vbp_forward(model::forward_with_trace(net, image).trace);
}

Tensor red_overlay(const Tensor& image, const Tensor& mask) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ShapeError("red_overlay: image must be [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  if (mask.shape() != Shape{1, image.dim(1), image.dim(2)})
    throw ShapeError("red_overlay: mask " + shape_str(mask.shape()) + " does not match image " +
                     shape_str(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor rgb({3, image.dim(1), image.dim(2)});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) rgb[c * plane + i] = image[(image.dim(0) == 1 ? 0 : c) * plane + i];
  for (std::size_t i = 0; i < plane; ++i) rgb[i] = std::clamp(rgb[i] + mask[i], 0.0, 1.0);
  return rgb;
}

}  // namespace lupi::train
