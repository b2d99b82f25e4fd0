#include <gtest/gtest.h>

#include "lupi/vbp.hpp"
#include "oracle/oracle.hpp"
#include "support/test_support.hpp"

using namespace lupi;
using namespace lupi::vbp;
using lupi::nn::DeconvGeometry;
using lupi::testing::TestRng;

namespace {

ForwardTrace single_entry(Tensor f, DeconvGeometry g) {
  ForwardTrace t;
  t.input_h = g.output_h;
  t.input_w = g.output_w;
  t.entries.push_back({std::move(f), g});
  return t;
}

}  // namespace

TEST(ChannelAverage, Examples) {
  Tensor f({2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) f[i] = 1.0, f[4 + i] = 3.0;
  EXPECT_EQ(channel_average(f), Tensor({1, 2, 2}, 2.0));
  TestRng rng(1);
  const Tensor one = rng.tensor({1, 3, 4});
  EXPECT_EQ(channel_average(one), one);
}

TEST(ChannelAverage, MatchesLoopOracle) {
  TestRng rng(2);
  const Tensor f = rng.tensor({4, 3, 3});
  const Tensor a = channel_average(f);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += f.at(c, y, x);
      EXPECT_NEAR(a.at(0, y, x), s / 4.0, 1e-12);
    }
}

TEST(Normalize, Examples) {
  const Tensor m({1, 2, 2}, {0, 2, 4, 8});
  EXPECT_EQ(normalize_01(m), Tensor({1, 2, 2}, {0, 0.25, 0.5, 1}));
  EXPECT_EQ(normalize_01(Tensor({1, 3, 3}, 4.2)), Tensor({1, 3, 3}));
  const Tensor unit({1, 2, 3}, {0, 0.3, 1, 0.5, 0.25, 0.75});
  EXPECT_EQ(normalize_01(unit), unit);
}

TEST(Normalize, BackwardMatchesFiniteDifference) {
  TestRng rng(3);
  const Tensor m = rng.tensor({1, 4, 5});
  const Tensor r = rng.tensor({1, 4, 5});
  const Tensor analytic = normalize_01_backward(m, r);
  const Tensor numeric = oracle::finite_diff_grad([&](const Tensor& v) { return dot(normalize_01(v), r); }, m);
  EXPECT_TRUE(oracle::compare_gradients(analytic, numeric).pass);
}

TEST(Normalize, DegenerateBackwardIsZero) {
  const Tensor m({1, 2, 2}, 3.0);
  EXPECT_EQ(normalize_01_backward(m, Tensor({1, 2, 2}, 1.0)), Tensor({1, 2, 2}));
}

TEST(VbpForward, ConstantSingleEntryIsAllZeros) {
  const auto t = single_entry(Tensor({1, 2, 2}, 0.6), {1, 1, 1, 0, 2, 2});
  EXPECT_EQ(vbp_forward(t).values, Tensor({1, 2, 2}));
}

TEST(VbpForward, OneHotSelectsWindow) {
  // Deep one-hot picks the 3x3 window at the top-left of the shallow grid;
  // the shallow map is nonzero at one pixel inside it, which the same-padded
  // projection spreads over rows/cols 0..2 of the input.
  ForwardTrace u;
  u.input_h = u.input_w = 5;
  Tensor s5({1, 5, 5});
  s5.at(0, 1, 1) = 1.0;
  u.entries.push_back({s5, {3, 3, 1, 1, 5, 5}});
  u.entries.push_back({Tensor({1, 3, 3}, 0.0), {3, 3, 1, 0, 5, 5}});
  u.entries[1].feature_map.at(0, 0, 0) = 1.0;  // window rows/cols 0..2 covers (1,1)
  const Tensor m5 = vbp_forward(u).values;
  EXPECT_EQ(m5, oracle::posthoc_vbp(u).values);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const bool inside = y <= 2 && x <= 2;
      if (inside)
        EXPECT_GT(m5.at(0, y, x), 0.0);
      else
        EXPECT_EQ(m5.at(0, y, x), 0.0);
    }
}

TEST(VbpForward, ZeroDeepestMapGivesZeros) {
  TestRng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = lupi::testing::random_trace(rng);
    auto& deepest = t.entries.back().feature_map;
    deepest = Tensor::zeros_like(deepest);
    const Tensor mask = vbp_forward(t).values;
    EXPECT_EQ(mask, Tensor({1, t.input_h, t.input_w}));
  }
}

TEST(VbpForward, BrokenChainRejected) {
  ForwardTrace t;
  t.input_h = t.input_w = 4;
  t.entries.push_back({Tensor({1, 4, 4}, 1.0), {3, 3, 1, 1, 4, 4}});
  t.entries.push_back({Tensor({1, 3, 3}, 1.0), {3, 3, 2, 1, 5, 5}});  // lands on 5x5, not 4x4
  EXPECT_THROW(vbp_forward(t), ShapeError);
  EXPECT_THROW(vbp_forward(ForwardTrace{}), ShapeError);
}

TEST(VbpProperty, RangeAndResolution) {
  TestRng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto t = lupi::testing::random_trace(rng);
    const Tensor m = vbp_forward(t).values;
    ASSERT_EQ(m.shape(), (Shape{1, t.input_h, t.input_w}));
    for (double v : m.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(VbpProperty, MatchesPosthocOracle) {
  TestRng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = lupi::testing::random_trace(rng);
    const Tensor a = vbp_forward(t).values, b = oracle::posthoc_vbp(t).values;
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(std::fabs(a[i] - b[i]), 1e-10);
  }
}

TEST(VbpProperty, MonotoneAbsorptionUnitGeometry) {
  TestRng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = rng.between(2, 8), w = rng.between(2, 8);
    ForwardTrace t;
    t.input_h = h;
    t.input_w = w;
    const std::size_t n = rng.between(1, 4);
    for (std::size_t l = 0; l < n; ++l) t.entries.push_back({rng.tensor({rng.between(1, 3), h, w}, 0.1, 1.0), {1, 1, 1, 0, h, w}});
    Tensor& deep = t.entries.back().feature_map;
    std::vector<bool> zeroed(h * w, false);
    for (std::size_t i = 0; i < h * w; ++i)
      if (rng.below(3) == 0) {
        zeroed[i] = true;
        for (std::size_t c = 0; c < deep.dim(0); ++c) deep[c * h * w + i] = 0.0;
      }
    const Tensor m = vbp_forward(t).values;
    for (std::size_t i = 0; i < h * w; ++i)
      if (zeroed[i]) {
        EXPECT_EQ(m[i], 0.0);
      }
  }
}

TEST(VbpBackward, ZeroGradIsZero) {
  TestRng rng(8);
  const auto t = lupi::testing::random_trace(rng);
  const auto g = vbp_backward(t, Tensor({1, t.input_h, t.input_w}));
  ASSERT_EQ(g.size(), t.entries.size());
  for (std::size_t l = 0; l < g.size(); ++l) EXPECT_EQ(g[l], Tensor::zeros_like(t.entries[l].feature_map));
}

TEST(VbpBackward, SingleEntryIdentityGeometry) {
  TestRng rng(9);
  const Tensor f = rng.tensor({3, 4, 4}, 0.0, 1.0);
  const auto t = single_entry(f, {1, 1, 1, 0, 4, 4});
  const Tensor r = rng.tensor({1, 4, 4});
  const auto g = vbp_backward(t, r);
  const Tensor routed = channel_average_backward(f.shape(), normalize_01_backward(channel_average(f), r));
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g[0][i], routed[i], 1e-14);
  const Tensor numeric = oracle::finite_diff_grad(
      [&](const Tensor& v) { return dot(vbp_forward(single_entry(v, {1, 1, 1, 0, 4, 4})).values, r); }, f);
  EXPECT_TRUE(oracle::compare_gradients(g[0], numeric).pass);
}

TEST(VbpBackward, ZeroPartnerBlocksGradient) {
  // Shallow map identically zero: the deep map's gradient must vanish because
  // every product it feeds is multiplied by zero.
  TestRng rng(10);
  ForwardTrace t;
  t.input_h = t.input_w = 4;
  t.entries.push_back({Tensor({2, 4, 4}), {1, 1, 1, 0, 4, 4}});
  t.entries.push_back({rng.tensor({2, 4, 4}, 0.1, 1.0), {1, 1, 1, 0, 4, 4}});
  const auto g = vbp_backward(t, rng.tensor({1, 4, 4}));
  EXPECT_EQ(g[1], Tensor({2, 4, 4}));
}

TEST(VbpBackward, RandomTracesMatchFiniteDifference) {
  TestRng rng(11);
  int checked = 0;
  for (int trial = 0; checked < 30 && trial < 2000; ++trial) {
    auto t = lupi::testing::random_trace(rng, 3, 8);
    for (auto& e : t.entries)
      for (auto& v : e.feature_map.data()) v = 0.05 + v;  // strictly positive: no structural ties
    const Tensor raw = lupi::testing::raw_projection(t);
    double lo = raw[0], hi = raw[0];
    for (double v : raw.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    std::size_t nlo = 0, nhi = 0;
    for (double v : raw.data()) nlo += v - lo < 1e-3 * (hi - lo), nhi += hi - v < 1e-3 * (hi - lo);
    if (!(hi - lo > 1e-6) || nlo != 1 || nhi != 1) continue;
    const Tensor r = rng.tensor({1, t.input_h, t.input_w});
    const auto g = vbp_backward(t, r);
    for (std::size_t l = 0; l < t.entries.size(); ++l) {
      const Tensor numeric = oracle::finite_diff_grad(
          [&](const Tensor& v) {
            auto u = t;
            u.entries[l].feature_map = v;
            return dot(vbp_forward(u).values, r);
          },
          t.entries[l].feature_map);
      const auto cmp = oracle::compare_gradients(g[l], numeric);
      EXPECT_TRUE(cmp.pass) << "entry " << l << " rel " << cmp.max_rel_error;
    }
    ++checked;
  }
  EXPECT_EQ(checked, 30);
}
