#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lupi/tensor.hpp"

namespace lupi::metrics {

// Raw rank-based AP; ties keep their original order. Throws when there are
// no positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// Mann-Whitney U / (P*N), ties counted as one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// scores[i][k], labels[i][k] for sample i and class k.
using ScoreMatrix = std::vector<std::vector<double>>;
using LabelMatrix = std::vector<std::vector<int>>;

// AUC over all (sample, class) pairs pooled together.
double micro_auc(const ScoreMatrix& scores, const LabelMatrix& labels);
// Unweighted mean of the per-class AUCs that are defined.
double macro_auc(const ScoreMatrix& scores, const LabelMatrix& labels);

struct PrPoint {
  double recall;
  double precision;
};

// One point per distinct score threshold, highest threshold first.
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

double mask_iou(const Tensor& vis, const Tensor& seg, double threshold = 0.5);

inline constexpr double kEnergyEpsilon = 1e-12;
double outside_mask_energy(const Tensor& vis, const Tensor& seg);

struct EvalReport {
  std::vector<std::optional<double>> per_class_ap;   // empty when undefined
  std::vector<std::optional<double>> per_class_auc;
  double mean_ap = 0.0;
  double median_ap = 0.0;
  double micro_auc = 0.0;
  double macro_auc = 0.0;
  double mean_mask_iou = 0.0;
  double mean_outside_energy = 0.0;
  std::vector<std::vector<PrPoint>> pr_curves;
};

// mask_ious / outside_energies may be empty (reported as 0).
EvalReport build_report(const ScoreMatrix& scores, const LabelMatrix& labels,
                        std::span<const double> mask_ious, std::span<const double> outside_energies);

// One row per class, then summary rows.
std::string report_to_tsv(const EvalReport& r);
std::string report_to_json(const EvalReport& r);
std::string pr_curve_to_tsv(const std::vector<PrPoint>& curve);

}  // namespace lupi::metrics
