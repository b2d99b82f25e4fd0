#include "lupi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lupi::metrics {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels, const char* who) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "average_precision");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0) throw std::domain_error("average_precision: no positive labels");
  double acc = 0.0;
  std::size_t tp = 0, rank = 0;
  for (std::size_t i : descending_order(scores)) {
    ++rank;
    if (labels[i] == 1) {
      ++tp;
      acc += static_cast<double>(tp) / static_cast<double>(rank);
    }
  }
  return acc / static_cast<double>(positives);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "roc_auc");
  const auto P = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t N = labels.size() - P;
  if (P == 0 || N == 0) throw std::domain_error("roc_auc: need at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based mid-ranks of the positives; every term is a multiple of 1/2.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) pos_rank_sum += mid;
    i = j;
  }
  const double u = pos_rank_sum - static_cast<double>(P) * static_cast<double>(P + 1) / 2.0;
  return u / (static_cast<double>(P) * static_cast<double>(N));
}

double micro_auc(const ScoreMatrix& scores, const LabelMatrix& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("micro_auc: row count mismatch");
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != labels[i].size()) throw std::invalid_argument("micro_auc: column count mismatch");
    s.insert(s.end(), scores[i].begin(), scores[i].end());
    l.insert(l.end(), labels[i].begin(), labels[i].end());
  }
  return roc_auc(s, l);
}

namespace {

std::pair<std::vector<double>, std::vector<int>> column(const ScoreMatrix& scores, const LabelMatrix& labels,
                                                        std::size_t k) {
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    s.push_back(scores[i].at(k));
    l.push_back(labels[i].at(k));
  }
  return {s, l};
}

bool has_both(const std::vector<int>& l) {
  const auto p = std::count(l.begin(), l.end(), 1);
  return p > 0 && static_cast<std::size_t>(p) < l.size();
}

}  // namespace

double macro_auc(const ScoreMatrix& scores, const LabelMatrix& labels) {
  if (scores.empty() || scores.size() != labels.size()) throw std::invalid_argument("macro_auc: bad input");
  const std::size_t K = scores.front().size();
  double acc = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < K; ++k) {
    auto [s, l] = column(scores, labels, k);
    if (!has_both(l)) continue;
    acc += roc_auc(s, l);
    ++defined;
  }
  if (defined == 0) throw std::domain_error("macro_auc: no class has both positives and negatives");
  return acc / static_cast<double>(defined);
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "pr_curve");
  const auto P = std::count(labels.begin(), labels.end(), 1);
  if (P == 0) throw std::domain_error("pr_curve: no positive labels");
  const auto order = descending_order(scores);
  std::vector<PrPoint> curve;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    ++seen;
    if (labels[order[i]] == 1) ++tp;
    const bool last_of_threshold = i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
    if (last_of_threshold)
      curve.push_back({static_cast<double>(tp) / static_cast<double>(P),
                       static_cast<double>(tp) / static_cast<double>(seen)});
  }
  return curve;
}

double mask_iou(const Tensor& vis, const Tensor& seg, double threshold) {
  require_same_shape(vis, seg, "mask_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < vis.size(); ++i) {
    const bool a = vis[i] >= threshold;
    const bool b = seg[i] >= 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double outside_mask_energy(const Tensor& vis, const Tensor& seg) {
  require_same_shape(vis, seg, "outside_mask_energy");
  double outside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < vis.size(); ++i) {
    total += vis[i];
    if (seg[i] == 0.0) outside += vis[i];
  }
  return outside / std::max(total, kEnergyEpsilon);
}

EvalReport build_report(const ScoreMatrix& scores, const LabelMatrix& labels, std::span<const double> mask_ious,
                        std::span<const double> outside_energies) {
  if (scores.empty()) throw std::invalid_argument("build_report: empty split");
  const std::size_t K = scores.front().size();
  EvalReport r;
  std::vector<double> aps;
  for (std::size_t k = 0; k < K; ++k) {
    auto [s, l] = column(scores, labels, k);
    if (std::count(l.begin(), l.end(), 1) > 0) {
      r.per_class_ap.push_back(average_precision(s, l));
      aps.push_back(*r.per_class_ap.back());
      r.pr_curves.push_back(pr_curve(s, l));
    } else {
      r.per_class_ap.push_back(std::nullopt);
      r.pr_curves.emplace_back();
    }
    r.per_class_auc.push_back(has_both(l) ? std::optional<double>(roc_auc(s, l)) : std::nullopt);
  }
  if (aps.empty()) {
    r.mean_ap = r.median_ap = kNaN;
  } else {
    r.mean_ap = std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
    std::sort(aps.begin(), aps.end());
    const std::size_t m = aps.size() / 2;
    r.median_ap = aps.size() % 2 ? aps[m] : (aps[m - 1] + aps[m]) / 2.0;
  }
  try {
    r.micro_auc = micro_auc(scores, labels);
  } catch (const std::domain_error&) {
    r.micro_auc = kNaN;
  }
  try {
    r.macro_auc = macro_auc(scores, labels);
  } catch (const std::domain_error&) {
    r.macro_auc = kNaN;
  }
  auto mean = [](std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.mean_mask_iou = mean(mask_ious);
  r.mean_outside_energy = mean(outside_energies);
  return r;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "nan"; }

nlohmann::json jnum(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
nlohmann::json jnum(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string report_to_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << "name\tap\tauc\n";
  for (std::size_t k = 0; k < r.per_class_ap.size(); ++k)
    os << "class" << k << '\t' << num(r.per_class_ap[k]) << '\t' << num(r.per_class_auc[k]) << '\n';
  os << "mean_ap\t" << num(r.mean_ap) << "\t-\n";
  os << "median_ap\t" << num(r.median_ap) << "\t-\n";
  os << "micro_auc\t-\t" << num(r.micro_auc) << '\n';
  os << "macro_auc\t-\t" << num(r.macro_auc) << '\n';
  os << "mean_mask_iou\t" << num(r.mean_mask_iou) << "\t-\n";
  os << "mean_outside_energy\t" << num(r.mean_outside_energy) << "\t-\n";
  return os.str();
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["per_class_ap"] = nlohmann::json::array();
  j["per_class_auc"] = nlohmann::json::array();
  for (const auto& v : r.per_class_ap) j["per_class_ap"].push_back(jnum(v));
  for (const auto& v : r.per_class_auc) j["per_class_auc"].push_back(jnum(v));
  j["mean_ap"] = jnum(r.mean_ap);
  j["median_ap"] = jnum(r.median_ap);
  j["micro_auc"] = jnum(r.micro_auc);
  j["macro_auc"] = jnum(r.macro_auc);
  j["mean_mask_iou"] = r.mean_mask_iou;
  j["mean_outside_energy"] = r.mean_outside_energy;
  return j.dump(2) + "\n";
}

std::string pr_curve_to_tsv(const std::vector<PrPoint>& curve) {
  std::ostringstream os;
  for (const auto& p : curve) os << num(p.recall) << '\t' << num(p.precision) << '\n';
  return os.str();
}

}  // namespace lupi::metrics
