#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lupi/tensor.hpp"

namespace lupi::data {

// (image, privileged segmentation mask, multi-label target).
struct Sample {
  Tensor image;     // [C,H,W] in [0,1]
  Tensor seg_mask;  // [1,H,W] binary
  Tensor labels;    // [K] in {0,1}
  std::string id;
};

enum class ShapeClass { disk, square, triangle, cross, ring, diamond };
inline constexpr std::size_t kMaxClasses = 6;
enum class ClutterStyle { lines, speckles };

std::string_view to_string(ShapeClass s);
std::string_view to_string(ClutterStyle s);
ClutterStyle parse_clutter_style(std::string_view s);

struct DatasetConfig {
  std::size_t num_samples = 100;
  std::size_t image_size = 16;
  std::size_t channels = 3;       // 1 (PGM) or 3 (PPM)
  std::size_t num_classes = 3;    // class k draws ShapeClass k
  double class_prob = 0.5;        // per-class presence before the 1..3 object constraint
  double clutter_density = 0.5;   // in [0,1]
  ClutterStyle clutter_style = ClutterStyle::lines;
  double clutter_correlation = 0.6;  // fraction of clutter strokes tied to a present class
  double background = 0.1;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  void validate() const;
  std::size_t train_count() const;
  std::size_t val_count() const;
  std::size_t test_count() const;
};

inline constexpr std::size_t kMaxObjects = 3;

// Deterministic in (cfg.seed, index); independent of generation order.
Sample generate_sample(const DatasetConfig& cfg, std::size_t index);
std::string sample_id(std::size_t index);

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);
Split split_of(const DatasetConfig& cfg, std::size_t index);

// Union of the filled bounding boxes of the 4-connected foreground components.
Tensor corrupt_mask_bbox(const Tensor& mask);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
  std::string labels;      // K characters of '0'/'1'
  Split split = Split::train;
};

// Writes images/, masks/ and manifest.tsv under out_dir. Returns the manifest path.
std::filesystem::path build_manifest(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path);
std::string format_manifest_line(const ManifestEntry& e);

// Loads one split. Mask files are only opened when load_masks is set;
// otherwise seg_mask is left empty.
std::vector<Sample> load_split(const std::filesystem::path& manifest_path, Split split,
                               bool load_masks);

// In-memory equivalent of build_manifest + load_split. Generated pixels are
// already 8-bit exact, so both paths yield identical samples.
std::vector<Sample> generate_split(const DatasetConfig& cfg, Split split);

}  // namespace lupi::data
