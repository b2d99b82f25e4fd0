#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>

#include "lupi/metrics.hpp"
#include "oracle/oracle.hpp"
#include "support/test_support.hpp"

using namespace lupi;
using namespace lupi::metrics;
using lupi::testing::TestRng;

namespace {

using D = std::vector<double>;
using I = std::vector<int>;

}  // namespace

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision(D{0.9, 0.8, 0.7}, I{1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(D{0.9, 0.8, 0.7}, I{1, 0, 1}), 5.0 / 6.0);
  EXPECT_EQ(average_precision(D{0.1, 0.9}, I{1, 0}), 0.5);
  EXPECT_THROW(average_precision(D{0.1, 0.9}, I{0, 0}), std::domain_error);
  EXPECT_THROW(average_precision(D{0.1}, I{0, 1}), std::invalid_argument);
}

TEST(AveragePrecision, TiesKeepOriginalOrder) {
  // Equal scores: the earlier index ranks first.
  EXPECT_EQ(average_precision(D{0.5, 0.5}, I{1, 0}), 1.0);
  EXPECT_EQ(average_precision(D{0.5, 0.5}, I{0, 1}), 0.5);
}

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc(D{0.1, 0.2, 0.8, 0.9}, I{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(roc_auc(D{0.3, 0.3, 0.3}, I{0, 1, 1}), 0.5);
  EXPECT_EQ(roc_auc(D{0.2, 0.4, 0.6, 0.8}, I{0, 1, 0, 1}), 0.75);
  EXPECT_THROW(roc_auc(D{0.2, 0.4}, I{1, 1}), std::domain_error);
}

TEST(MaskIou, Examples) {
  const Tensor seg({1, 2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(mask_iou(seg, seg), 1.0);
  EXPECT_EQ(mask_iou(Tensor({1, 2, 2}, {0, 1, 1, 0}), seg), 0.0);
  EXPECT_EQ(mask_iou(Tensor({1, 2, 2}), Tensor({1, 2, 2})), 1.0);
  // Two 2x2 squares offset by one column on a 2x3 grid: overlap 2, union 6.
  Tensor a({1, 2, 3}, {1, 1, 0, 1, 1, 0}), b({1, 2, 3}, {0, 1, 1, 0, 1, 1});
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 2.0 / 6.0);
}

TEST(OutsideEnergy, Examples) {
  const Tensor seg({1, 2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(outside_mask_energy(Tensor({1, 2, 2}, {0.4, 0, 0, 0.9}), seg), 0.0);
  EXPECT_EQ(outside_mask_energy(Tensor({1, 2, 2}, 0.3), seg), 0.5);
  Tensor quarter({1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i) quarter[i] = 1.0;
  EXPECT_DOUBLE_EQ(outside_mask_energy(Tensor({1, 4, 4}, 0.7), quarter), 0.75);
  EXPECT_EQ(outside_mask_energy(Tensor({1, 2, 2}), seg), 0.0);
}

TEST(PrCurve, Examples) {
  const auto perfect = pr_curve(D{0.9, 0.8, 0.3, 0.1}, I{1, 1, 0, 0});
  ASSERT_EQ(perfect.size(), 4u);
  EXPECT_EQ(perfect[0].precision, 1.0);
  EXPECT_EQ(perfect[1].recall, 1.0);
  EXPECT_EQ(perfect[1].precision, 1.0);
  const auto reversed = pr_curve(D{0.1, 0.9}, I{1, 0});
  ASSERT_EQ(reversed.size(), 2u);
  EXPECT_EQ(reversed[0].recall, 0.0);
  EXPECT_EQ(reversed[1].recall, 1.0);
  EXPECT_EQ(reversed[1].precision, 0.5);
  // Tied scores collapse into one threshold.
  EXPECT_EQ(pr_curve(D{0.5, 0.5, 0.2}, I{1, 0, 1}).size(), 2u);
  EXPECT_THROW(pr_curve(D{0.5}, I{0}), std::domain_error);
}

TEST(MetricsProperty, PrRecallMonotoneEndsAtOne) {
  TestRng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.between(1, 30);
    D s(n);
    I l(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::round(rng.uniform() * 10) / 10, l[i] = rng.below(2);
    l[rng.below(n)] = 1;
    const auto c = pr_curve(s, l);
    for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GE(c[i].recall, c[i - 1].recall);
    EXPECT_EQ(c.back().recall, 1.0);
  }
}

TEST(MetricsProperty, ApInvariantUnderMonotoneTransform) {
  TestRng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.between(2, 40);
    D s(n), t(n);
    I l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform(-3, 3) * 4) / 4;  // with ties
      t[i] = std::exp(2.0 * s[i]) + 7.0;
      l[i] = rng.below(2);
    }
    l[0] = 1;
    EXPECT_EQ(average_precision(s, l), average_precision(t, l));
  }
}

TEST(MetricsProperty, AucSymmetryWithoutTies) {
  TestRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.between(2, 40);
    D s(n), neg(n);
    I l(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = rng.uniform(), neg[i] = -s[i], l[i] = rng.below(2);
    l[0] = 1;
    l[1] = 0;
    EXPECT_NEAR(roc_auc(s, l) + roc_auc(neg, l), 1.0, 1e-15);
  }
}

TEST(MetricsOracle, SingleClassExhaustive) {
  const auto r = lupi::testing::sweep_single_class_metrics(6);
  EXPECT_GT(r.instances, 0u);
  EXPECT_EQ(r.mismatches, 0u);
}

TEST(MetricsOracle, MultiClassSmall) {
  const auto r = lupi::testing::sweep_multiclass_auc(4, 3, 5040, 20, 4);
  EXPECT_EQ(r.mismatches, 0u);
}

TEST(MetricsOracle, MicroAucWithTiesUpTo20x4) {
  TestRng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng.between(1, 20), k = rng.between(1, 4);
    ScoreMatrix s(n, std::vector<double>(k));
    LabelMatrix l(n, std::vector<int>(k));
    for (auto& row : s)
      for (auto& v : row) v = static_cast<double>(rng.below(6)) / 5.0;
    for (auto& row : l)
      for (auto& v : row) v = static_cast<int>(rng.below(2));
    l[0][0] = 1;
    if (n * k > 1)
      l[n - 1][k - 1] = 0;
    else
      continue;
    EXPECT_EQ(micro_auc(s, l), oracle::brute_micro_auc(s, l));
  }
}

TEST(Report, TsvAndJson) {
  const ScoreMatrix s{{0.9, 0.1, 0.3}, {0.2, 0.8, 0.4}, {0.7, 0.6, 0.5}};
  const LabelMatrix l{{1, 0, 0}, {0, 1, 0}, {1, 0, 0}};
  const D ious{0.5, 1.0}, energy{0.25, 0.75};
  const auto r = build_report(s, l, ious, energy);
  ASSERT_EQ(r.per_class_ap.size(), 3u);
  EXPECT_FALSE(r.per_class_ap[2].has_value());  // class 2 has no positives
  EXPECT_EQ(*r.per_class_ap[0], 1.0);
  EXPECT_EQ(r.mean_ap, 1.0);
  EXPECT_EQ(r.median_ap, 1.0);
  EXPECT_EQ(r.mean_mask_iou, 0.75);
  EXPECT_EQ(r.mean_outside_energy, 0.5);
  for (double v : {r.mean_ap, r.median_ap, r.micro_auc, r.macro_auc, r.mean_mask_iou, r.mean_outside_energy})
    EXPECT_TRUE(v >= 0.0 && v <= 1.0);

  const std::string tsv = report_to_tsv(r);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 1 + 3 + 6);
  EXPECT_NE(tsv.find("class2\tnan\tnan\n"), std::string::npos);
  const auto j = nlohmann::json::parse(report_to_json(r));
  EXPECT_EQ(j["per_class_ap"].size(), 3u);
  EXPECT_TRUE(j["per_class_ap"][2].is_null());
  EXPECT_EQ(j["mean_ap"].get<double>(), 1.0);
  EXPECT_EQ(pr_curve_to_tsv(r.pr_curves[0]), "0.500000\t1.000000\n1.000000\t1.000000\n1.000000\t0.666667\n");
}
