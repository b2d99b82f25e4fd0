#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lupi/data.hpp"
#include "lupi/image_io.hpp"
#include "support/test_support.hpp"

using namespace lupi;
using namespace lupi::data;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lupi_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool all_channels_background(const Sample& s, std::size_t y, std::size_t x, double bg) {
  for (std::size_t c = 0; c < s.image.dim(0); ++c)
    if (s.image.at(c, y, x) != bg) return false;
  return true;
}

}  // namespace

TEST(Generator, NoClutterForegroundMatchesMask) {
  DatasetConfig cfg;
  cfg.num_samples = 200;
  cfg.clutter_density = 0.0;
  const double bg = io::dequantize(io::quantize(cfg.background));
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const Sample s = generate_sample(cfg, i);
    for (std::size_t y = 0; y < cfg.image_size; ++y)
      for (std::size_t x = 0; x < cfg.image_size; ++x)
        ASSERT_EQ(s.seg_mask.at(0, y, x) == 0.0, all_channels_background(s, y, x, bg)) << i;
  }
}

TEST(Generator, Deterministic) {
  DatasetConfig cfg;
  cfg.num_samples = 50;
  for (std::size_t i = 0; i < 50; ++i) {
    const Sample a = generate_sample(cfg, i), b = generate_sample(cfg, i);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.seg_mask, b.seg_mask);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.id, b.id);
  }
  auto other = cfg;
  other.seed = 2;
  EXPECT_FALSE(generate_sample(cfg, 3).image == generate_sample(other, 3).image);
}

TEST(Generator, SampleInvariants) {
  for (auto style : {ClutterStyle::lines, ClutterStyle::speckles})
    for (std::size_t channels : {1, 3}) {
      DatasetConfig cfg;
      cfg.num_samples = 300;
      cfg.num_classes = 6;
      cfg.channels = channels;
      cfg.clutter_style = style;
      cfg.clutter_density = 1.0;
      const double bg = io::dequantize(io::quantize(cfg.background));
      for (std::size_t i = 0; i < cfg.num_samples; ++i) {
        const Sample s = generate_sample(cfg, i);
        const double present = sum(s.labels);
        ASSERT_GE(present, 1.0);
        ASSERT_LE(present, 3.0);
        for (double v : s.image.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        for (double v : s.seg_mask.data()) ASSERT_TRUE(v == 0.0 || v == 1.0);
        // Every mask pixel is painted (not background); clutter never lands inside the mask.
        for (std::size_t y = 0; y < cfg.image_size; ++y)
          for (std::size_t x = 0; x < cfg.image_size; ++x)
            if (s.seg_mask.at(0, y, x) != 0.0) {
              ASSERT_FALSE(all_channels_background(s, y, x, bg));
            }
        EXPECT_EQ(io::quantized(s.image), s.image);
      }
    }
}

TEST(Generator, LabelFrequenciesWithinThreeSigma) {
  DatasetConfig cfg;
  cfg.num_samples = 10000;
  cfg.num_classes = 3;
  cfg.class_prob = 0.5;
  // Presence is conditioned on at least one object (three classes never exceed the cap).
  const double p = cfg.class_prob / (1.0 - std::pow(1.0 - cfg.class_prob, 3));
  const double n = static_cast<double>(cfg.num_samples);
  const double sigma = std::sqrt(n * p * (1.0 - p));
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const Sample s = generate_sample(cfg, i);
    for (std::size_t k = 0; k < 3; ++k) counts[k] += s.labels[k];
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(std::fabs(counts[k] - n * p), 3.0 * sigma) << "class " << k;
}

TEST(Generator, Errors) {
  DatasetConfig cfg;
  cfg.image_size = 4;
  EXPECT_THROW(generate_sample(cfg, 0), std::invalid_argument);
  cfg = {};
  EXPECT_THROW(generate_sample(cfg, cfg.num_samples), std::out_of_range);
  cfg.train_fraction = 0.9;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Bbox, DiskBecomesCircumscribingSquare) {
  for (long r = 1; r <= 5; ++r) {
    const std::size_t S = 2 * r + 5;
    const long c = static_cast<long>(S / 2);
    Tensor disk({1, S, S});
    for (long y = 0; y < static_cast<long>(S); ++y)
      for (long x = 0; x < static_cast<long>(S); ++x)
        if ((y - c) * (y - c) + (x - c) * (x - c) <= r * r) disk.at(0, y, x) = 1.0;
    const Tensor box = corrupt_mask_bbox(disk);
    for (long y = 0; y < static_cast<long>(S); ++y)
      for (long x = 0; x < static_cast<long>(S); ++x) {
        const bool inside = std::labs(y - c) <= r && std::labs(x - c) <= r;
        ASSERT_EQ(box.at(0, y, x), inside ? 1.0 : 0.0) << "r=" << r;
      }
    EXPECT_EQ(sum(box), static_cast<double>((2 * r + 1) * (2 * r + 1)));
  }
}

TEST(Bbox, FixedPointsAndComponents) {
  Tensor rect({1, 6, 7});
  for (std::size_t y = 1; y <= 3; ++y)
    for (std::size_t x = 2; x <= 5; ++x) rect.at(0, y, x) = 1.0;
  EXPECT_EQ(corrupt_mask_bbox(rect), rect);
  EXPECT_EQ(corrupt_mask_bbox(Tensor({1, 5, 5})), Tensor({1, 5, 5}));

  // Diagonal neighbours are separate components under 4-connectivity.
  Tensor diag({1, 4, 4});
  diag.at(0, 0, 0) = diag.at(0, 1, 1) = 1.0;
  EXPECT_EQ(corrupt_mask_bbox(diag), diag);
}

TEST(BboxProperty, OnlyAddsArea) {
  DatasetConfig cfg;
  cfg.num_samples = 200;
  cfg.num_classes = 6;
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const Tensor m = generate_sample(cfg, i).seg_mask;
    const Tensor b = corrupt_mask_bbox(m);
    for (std::size_t j = 0; j < m.size(); ++j) ASSERT_GE(b[j], m[j]);
  }
}

TEST(Splits, Arithmetic) {
  DatasetConfig cfg;
  cfg.num_samples = 10;
  EXPECT_EQ(cfg.train_count(), 8u);
  EXPECT_EQ(cfg.val_count(), 1u);
  EXPECT_EQ(cfg.test_count(), 1u);
  EXPECT_EQ(split_of(cfg, 7), Split::train);
  EXPECT_EQ(split_of(cfg, 8), Split::val);
  EXPECT_EQ(split_of(cfg, 9), Split::test);
  EXPECT_THROW(parse_split("holdout"), std::invalid_argument);
}

TEST(Manifest, TenSamplesDeterministic) {
  DatasetConfig cfg;
  cfg.num_samples = 10;
  const auto dir_a = scratch("a"), dir_b = scratch("b");
  const auto ma = build_manifest(cfg, dir_a), mb = build_manifest(cfg, dir_b);
  const std::string text = slurp(ma);
  EXPECT_EQ(text, slurp(mb));
  EXPECT_EQ(text.find('\r'), std::string::npos);

  const auto entries = read_manifest(ma);
  ASSERT_EQ(entries.size(), 10u);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    EXPECT_EQ(e.id, sample_id(i));
    EXPECT_EQ(e.labels.size(), cfg.num_classes);
    ++counts[static_cast<int>(e.split)];
    EXPECT_EQ(slurp(dir_a / e.image_path), slurp(dir_b / e.image_path));
    EXPECT_EQ(slurp(dir_a / e.mask_path), slurp(dir_b / e.mask_path));
  }
  EXPECT_EQ(counts[0], 8u);
  EXPECT_EQ(counts[1], 1u);
  EXPECT_EQ(counts[2], 1u);
  EXPECT_EQ(format_manifest_line(entries[0]), text.substr(0, text.find('\n') + 1));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST(Manifest, LoadedSplitEqualsGeneratedSplit) {
  DatasetConfig cfg;
  cfg.num_samples = 30;
  cfg.channels = 1;
  const auto dir = scratch("load");
  const auto manifest = build_manifest(cfg, dir);
  for (auto split : {Split::train, Split::val, Split::test}) {
    const auto loaded = load_split(manifest, split, true);
    const auto generated = generate_split(cfg, split);
    ASSERT_EQ(loaded.size(), generated.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      EXPECT_EQ(loaded[i].id, generated[i].id);
      EXPECT_EQ(loaded[i].image, generated[i].image);
      EXPECT_EQ(loaded[i].seg_mask, generated[i].seg_mask);
      EXPECT_EQ(loaded[i].labels, generated[i].labels);
    }
  }
  fs::remove_all(dir);
}

TEST(Manifest, MasksNotOpenedUnlessRequested) {
  DatasetConfig cfg;
  cfg.num_samples = 10;
  const auto dir = scratch("nomask");
  const auto manifest = build_manifest(cfg, dir);
  fs::remove_all(dir / "masks");
  const auto samples = load_split(manifest, Split::train, false);
  EXPECT_EQ(samples.size(), 8u);
  for (const auto& s : samples) EXPECT_TRUE(s.seg_mask.empty());
  EXPECT_THROW(load_split(manifest, Split::train, true), io::ImageIoError);
  fs::remove_all(dir);
}

TEST(Manifest, MalformedLineRejected) {
  const auto dir = scratch("bad");
  {
    std::ofstream os(dir / "manifest.tsv");
    os << "s000000\timages/a.ppm\tmasks/a.pgm\t01x\ttrain\n";
  }
  EXPECT_THROW(read_manifest(dir / "manifest.tsv"), std::runtime_error);
  {
    std::ofstream os(dir / "manifest.tsv");
    os << "s000000\timages/a.ppm\t01\ttrain\n";
  }
  EXPECT_THROW(read_manifest(dir / "manifest.tsv"), std::runtime_error);
  fs::remove_all(dir);
}
