#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lupi/data.hpp"
#include "lupi/model.hpp"
#include "lupi/train.hpp"

namespace lupi::config {

// Reports the offending field (and line, for syntax errors).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MaskCorruption { none, bbox };

struct DatasetJob {
  data::DatasetConfig dataset;
  std::filesystem::path output_dir;
};

struct RunConfig {
  train::TrainConfig train;
  std::vector<model::LayerSpec> layers;
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  MaskCorruption mask_corruption = MaskCorruption::none;
};

// Relative paths inside a config file resolve against the file's directory.
DatasetJob load_dataset_config(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

DatasetJob parse_dataset_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);

// Fully resolved config in the same key = value format.
std::string format_run_config(const RunConfig& cfg);
std::string format_dataset_config(const DatasetJob& job);

}  // namespace lupi::config
