#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lupi/model.hpp"
#include "support/test_support.hpp"

using namespace lupi;
using namespace lupi::model;
using lupi::testing::TestRng;

namespace {

NetworkSpec small_spec() { return lupi::testing::gradcheck_spec(3); }

Network randomized(const NetworkSpec& spec, TestRng& rng) {
  auto net = Network::build(spec, rng.engine()());
  for (Tensor* t : net.parameters())
    for (auto& v : t->data()) v = rng.uniform(-0.5, 0.5);
  return net;
}

}  // namespace

TEST(Spec, ValidatesStructure) {
  auto spec = small_spec();
  EXPECT_NO_THROW(spec.validate());

  auto missing_relu = spec;
  missing_relu.layers.erase(missing_relu.layers.begin() + 1);
  EXPECT_THROW(missing_relu.validate(), SpecError);

  auto conv_after_gap = spec;
  conv_after_gap.layers.insert(conv_after_gap.layers.begin() + 6, LayerSpec::conv(2, 1, 1, 0));
  EXPECT_THROW(conv_after_gap.validate(), SpecError);

  auto wrong_k = spec;
  wrong_k.layers[6] = LayerSpec::linear(4);
  EXPECT_THROW(wrong_k.validate(), SpecError);

  auto too_small = spec;
  too_small.in_h = too_small.in_w = 1;
  too_small.layers[0] = LayerSpec::conv(3, 5, 1, 0);
  EXPECT_THROW(too_small.validate(), SpecError);

  auto stride3 = spec;
  stride3.layers[2] = LayerSpec::conv(4, 3, 3, 1);
  EXPECT_THROW(stride3.validate(), SpecError);
}

TEST(Spec, ErrorNamesFailingLayer) {
  auto spec = small_spec();
  spec.layers.erase(spec.layers.begin() + 3);  // conv at index 2 no longer followed by relu
  try {
    spec.validate();
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

TEST(Spec, TextRoundTrip) {
  auto spec = small_spec();
  spec.mask_channel = true;
  spec.in_channels = 2;
  EXPECT_EQ(spec_from_text(spec_to_text(spec)), spec);
  const auto layers = parse_layers("conv 8 3 1 1; relu; resblock 3; gap; linear 3; sigmoid");
  EXPECT_EQ(layers.size(), 6u);
  EXPECT_EQ(parse_layers(format_layers(layers)), layers);
  EXPECT_THROW(parse_layers("conv 8 3; relu"), SpecError);
  EXPECT_THROW(parse_layers("pool 2"), SpecError);
}

TEST(SpecProperty, ShapeAlgebraStaysPositive) {
  TestRng rng(1);
  int accepted = 0;
  for (int trial = 0; trial < 500; ++trial) {
    NetworkSpec spec;
    spec.in_channels = rng.between(1, 3);
    spec.in_h = rng.between(1, 16);
    spec.in_w = rng.between(1, 16);
    spec.num_classes = rng.between(1, 4);
    const std::size_t blocks = rng.between(1, 4);
    for (std::size_t b = 0; b < blocks; ++b) {
      if (rng.below(3) == 0) {
        spec.layers.push_back(LayerSpec::resblock(rng.below(2) ? 3 : 1));
      } else {
        const std::size_t k = rng.between(1, 5);
        spec.layers.push_back(LayerSpec::conv(rng.between(1, 4), k, rng.between(1, 2), rng.between(0, 2)));
        spec.layers.push_back(LayerSpec::relu());
      }
    }
    spec.layers.push_back(LayerSpec::global_avg_pool());
    spec.layers.push_back(LayerSpec::linear(spec.num_classes));
    spec.layers.push_back(LayerSpec::sigmoid());
    try {
      spec.validate();
    } catch (const SpecError&) {
      continue;
    }
    ++accepted;
    for (const auto& s : spec.layer_shapes())
      for (std::size_t d : s) ASSERT_GT(d, 0u);
  }
  EXPECT_GT(accepted, 50);
}

TEST(Build, DeterministicGlorotZeroBias) {
  const auto spec = small_spec();
  const auto a = Network::build(spec, 42), b = Network::build(spec, 42), c = Network::build(spec, 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    differs |= !(*pa[i] == *pc[i]);
  }
  EXPECT_TRUE(differs);

  const auto names = a.parameter_names();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Tensor& t = *pa[i];
    if (t.rank() == 1) {
      EXPECT_EQ(t, Tensor::zeros_like(t)) << names[i];
      continue;
    }
    double fan_in, fan_out;
    if (t.rank() == 4) {
      fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
      fan_out = static_cast<double>(t.dim(0) * t.dim(2) * t.dim(3));
    } else {
      fan_in = static_cast<double>(t.dim(1));
      fan_out = static_cast<double>(t.dim(0));
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double v : t.data()) EXPECT_LE(std::fabs(v), bound) << names[i];
  }
}

TEST(Build, InvalidSpecRejected) {
  auto spec = small_spec();
  spec.layers.pop_back();
  EXPECT_THROW(Network::build(spec, 1), SpecError);
}

TEST(Forward, TraceLengthAndGeometryChain) {
  TestRng rng(2);
  const auto net = randomized(small_spec(), rng);
  const Tensor x = rng.tensor({1, 8, 8}, 0.0, 1.0);
  const auto fr = forward_with_trace(net, x);
  ASSERT_EQ(fr.trace.entries.size(), 3u);
  EXPECT_EQ(fr.trace.input_h, 8u);
  EXPECT_EQ(fr.trace.input_w, 8u);
  std::size_t h = 8, w = 8;
  for (const auto& e : fr.trace.entries) {
    EXPECT_EQ(e.geometry.output_h, h);
    EXPECT_EQ(e.geometry.output_w, w);
    EXPECT_EQ(nn::deconv_input_h(e.geometry), e.feature_map.dim(1));
    EXPECT_EQ(nn::deconv_input_w(e.geometry), e.feature_map.dim(2));
    for (double v : e.feature_map.data()) EXPECT_GE(v, 0.0);
    h = e.feature_map.dim(1);
    w = e.feature_map.dim(2);
  }
  EXPECT_NO_THROW(vbp::validate_trace(fr.trace));
  for (double p : fr.probs.data()) EXPECT_TRUE(p >= 0.0 && p <= 1.0);
}

TEST(Forward, ZeroNetworkGivesHalf) {
  auto net = Network::build(small_spec(), 3);
  for (Tensor* t : net.parameters()) *t = Tensor::zeros_like(*t);
  TestRng rng(3);
  EXPECT_EQ(predict(net, rng.tensor({1, 8, 8})), Tensor({3}, 0.5));
}

TEST(Forward, ShapeAndAuxMaskErrors) {
  const auto net = Network::build(small_spec(), 4);
  EXPECT_THROW(predict(net, Tensor({1, 7, 8})), ShapeError);
  const Tensor aux({1, 8, 8});
  EXPECT_THROW(predict(net, Tensor({1, 8, 8}), &aux), std::invalid_argument);

  auto spec = small_spec();
  spec.in_channels = 2;
  spec.mask_channel = true;
  const auto masked = Network::build(spec, 5);
  // The mask channel is fed as zeros when no mask is given.
  EXPECT_EQ(predict(masked, Tensor({1, 8, 8})), predict(masked, Tensor({1, 8, 8}), &aux));
  EXPECT_EQ(prepare_input(spec, Tensor({1, 8, 8}, 0.5), nullptr).shape(), (Shape{2, 8, 8}));
}

TEST(Predict, HeadTransparency) {
  TestRng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = randomized(small_spec(), rng);
    const Tensor x = rng.tensor({1, 8, 8}, 0.0, 1.0);
    const Tensor p1 = predict(net, x);
    const auto fr = forward_with_trace(net, x);
    ASSERT_EQ(p1, fr.probs);
    (void)vbp::vbp_forward(fr.trace);  // post-hoc mask must not feed back
    ASSERT_EQ(predict(net, x), p1);
    ASSERT_EQ(forward_tape(net, x).probs, p1);
  }
}

TEST(Backward, MatchesFiniteDifferenceForClassificationLoss) {
  TestRng rng(7);
  const auto point = lupi::testing::kink_free_point(rng, small_spec(), train::Regime::regular, 1e-3);
  const auto r = lupi::testing::check_network_gradient(point.net, point.sample, train::Regime::regular, 1.0);
  EXPECT_TRUE(r.comparison.pass) << r.comparison.max_rel_error;
  EXPECT_EQ(r.coordinates, point.net.parameter_count());
}

TEST(Checkpoint, RoundTrip) {
  TestRng rng(8);
  const auto net = randomized(small_spec(), rng);
  const auto bytes = serialize_checkpoint(net);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.spec(), net.spec());
  EXPECT_EQ(back.seed(), net.seed());
  const auto a = net.parameters(), b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  const auto dir = std::filesystem::temp_directory_path() / "lupi_test_model_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(net, dir / "n.pfck");
  const auto loaded = load_checkpoint(dir / "n.pfck");
  EXPECT_EQ(serialize_checkpoint(loaded), bytes);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, FreshNetworkKeepsZeroBiases) {
  const auto net = Network::build(small_spec(), 9);
  const auto back = deserialize_checkpoint(serialize_checkpoint(net));
  for (const Tensor* t : back.parameters())
    if (t->rank() == 1) {
      EXPECT_EQ(*t, Tensor::zeros_like(*t));
    }
}

namespace {

CheckpointError::Kind kind_of(const std::vector<unsigned char>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected CheckpointError";
  return CheckpointError::Kind::io;
}

void put_u64(std::vector<unsigned char>& b, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[at + i] = static_cast<unsigned char>(v >> (8 * i));
}

}  // namespace

TEST(Checkpoint, CorruptionIsReportedDistinctly) {
  const auto good = serialize_checkpoint(Network::build(small_spec(), 10));
  using K = CheckpointError::Kind;

  auto magic = good;
  magic[0] ^= 0x01;
  EXPECT_EQ(kind_of(magic), K::bad_magic);

  auto version = good;
  version[8] = 2;
  EXPECT_EQ(kind_of(version), K::version);

  auto truncated = good;
  truncated.resize(good.size() - 5);
  EXPECT_EQ(kind_of(truncated), K::truncated);
  EXPECT_EQ(kind_of(std::vector<unsigned char>(good.begin(), good.begin() + 10)), K::truncated);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), K::corrupt_length);

  auto huge_spec = good;
  put_u64(huge_spec, 20, std::uint64_t{1} << 40);
  EXPECT_EQ(kind_of(huge_spec), K::corrupt_length);

  // Parameter count field follows the spec text.
  std::uint64_t spec_len = 0;
  for (int i = 0; i < 8; ++i) spec_len |= std::uint64_t{good[20 + i]} << (8 * i);
  auto count = good;
  put_u64(count, 28 + spec_len, 3);
  EXPECT_EQ(kind_of(count), K::corrupt_length);

  auto bad_spec = good;
  bad_spec[28] = '#';
  EXPECT_EQ(kind_of(bad_spec), K::spec);

  try {
    load_checkpoint("/nonexistent/dir/x.pfck");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), K::io);
  }
}
