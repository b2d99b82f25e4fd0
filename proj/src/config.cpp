#include "lupi/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace lupi::config {

namespace {

namespace pt = boost::property_tree;

pt::ptree parse_ini(const std::string& text) {
  std::istringstream is(text);
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  return tree;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void check_keys(const pt::ptree& tree, const std::map<std::string, std::set<std::string>>& allowed) {
  for (const auto& [section, body] : tree) {
    const auto it = allowed.find(section);
    if (it == allowed.end() || body.data().size() != 0)
      throw ConfigError("unknown section '" + section + "'");
    for (const auto& [key, _] : body)
      if (!it->second.count(key)) throw ConfigError("unknown field '" + section + "." + key + "'");
  }
}

template <typename T>
T field(const pt::ptree& tree, const std::string& key, const T& fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  std::istringstream is(*node);
  T v{};
  if constexpr (std::is_same_v<T, std::string>) {
    return *node;
  } else {
    if (!(is >> v)) throw ConfigError("field '" + key + "': cannot parse '" + *node + "'");
    std::string rest;
    if (is >> rest) throw ConfigError("field '" + key + "': trailing text in '" + *node + "'");
    if constexpr (std::is_unsigned_v<T>)
      if (node->find('-') != std::string::npos) throw ConfigError("field '" + key + "': must be nonnegative");
  }
  return v;
}

template <typename T>
T required(const pt::ptree& tree, const std::string& key) {
  if (!tree.get_optional<std::string>(key)) throw ConfigError("missing required field '" + key + "'");
  return field<T>(tree, key, T{});
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Re-throws validation failures from library types as ConfigError.
template <typename F>
void validated(const char* section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[") + section + "] " + e.what());
  }
}

}  // namespace

DatasetJob parse_dataset_config(const std::string& text, const std::filesystem::path& base_dir) {
  const pt::ptree tree = parse_ini(text);
  check_keys(tree, {{"dataset",
                     {"num_samples", "image_size", "channels", "num_classes", "class_prob", "clutter_density",
                      "clutter_style", "clutter_correlation", "background", "seed", "train_fraction",
                      "val_fraction", "test_fraction", "output_dir"}}});
  DatasetJob job;
  auto& d = job.dataset;
  const data::DatasetConfig def;
  d.num_samples = field<std::size_t>(tree, "dataset.num_samples", def.num_samples);
  d.image_size = field<std::size_t>(tree, "dataset.image_size", def.image_size);
  d.channels = field<std::size_t>(tree, "dataset.channels", def.channels);
  d.num_classes = field<std::size_t>(tree, "dataset.num_classes", def.num_classes);
  d.class_prob = field<double>(tree, "dataset.class_prob", def.class_prob);
  d.clutter_density = field<double>(tree, "dataset.clutter_density", def.clutter_density);
  d.clutter_correlation = field<double>(tree, "dataset.clutter_correlation", def.clutter_correlation);
  d.background = field<double>(tree, "dataset.background", def.background);
  d.seed = field<std::uint64_t>(tree, "dataset.seed", def.seed);
  d.train_fraction = field<double>(tree, "dataset.train_fraction", def.train_fraction);
  d.val_fraction = field<double>(tree, "dataset.val_fraction", def.val_fraction);
  d.test_fraction = field<double>(tree, "dataset.test_fraction", def.test_fraction);
  validated("dataset", [&] {
    d.clutter_style = data::parse_clutter_style(field<std::string>(tree, "dataset.clutter_style", "lines"));
    d.validate();
  });
  job.output_dir = resolve(base_dir, required<std::string>(tree, "dataset.output_dir"));
  return job;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  const pt::ptree tree = parse_ini(text);
  check_keys(tree, {{"run",
                     {"regime", "lambda", "manifest", "mask_corruption", "seed", "epochs", "batch_size",
                      "output_dir"}},
                    {"network", {"layers"}},
                    {"optim",
                     {"adam_lr", "sgd_lr", "momentum", "beta1", "beta2", "eps", "switch_step", "decay_factor",
                      "decay_interval", "decay_unit", "lr_min", "patience"}}});
  RunConfig cfg;
  auto& t = cfg.train;
  const train::TrainConfig def;
  validated("run", [&] { t.regime = train::parse_regime(required<std::string>(tree, "run.regime")); });
  t.lambda = field<double>(tree, "run.lambda", def.lambda);
  t.seed = field<std::uint64_t>(tree, "run.seed", def.seed);
  t.epochs = field<std::size_t>(tree, "run.epochs", def.epochs);
  t.batch_size = field<std::size_t>(tree, "run.batch_size", def.batch_size);
  const auto corruption = field<std::string>(tree, "run.mask_corruption", "none");
  if (corruption == "none")
    cfg.mask_corruption = MaskCorruption::none;
  else if (corruption == "bbox")
    cfg.mask_corruption = MaskCorruption::bbox;
  else
    throw ConfigError("field 'run.mask_corruption': expected none or bbox, got '" + corruption + "'");
  cfg.manifest = resolve(base_dir, required<std::string>(tree, "run.manifest"));
  cfg.output_dir = resolve(base_dir, required<std::string>(tree, "run.output_dir"));

  validated("network", [&] { cfg.layers = model::parse_layers(required<std::string>(tree, "network.layers")); });

  auto& s = t.schedule;
  s.adam_lr = field<double>(tree, "optim.adam_lr", s.adam_lr);
  s.sgd_lr = field<double>(tree, "optim.sgd_lr", s.sgd_lr);
  t.momentum = field<double>(tree, "optim.momentum", def.momentum);
  t.beta1 = field<double>(tree, "optim.beta1", def.beta1);
  t.beta2 = field<double>(tree, "optim.beta2", def.beta2);
  t.adam_eps = field<double>(tree, "optim.eps", def.adam_eps);
  s.switch_step = field<std::int64_t>(tree, "optim.switch_step", s.switch_step);
  s.decay_factor = field<double>(tree, "optim.decay_factor", s.decay_factor);
  s.decay_interval = field<std::int64_t>(tree, "optim.decay_interval", s.decay_interval);
  s.lr_min = field<double>(tree, "optim.lr_min", s.lr_min);
  s.patience = field<int>(tree, "optim.patience", s.patience);
  validated("optim", [&] {
    s.decay_unit = optim::parse_decay_unit(field<std::string>(tree, "optim.decay_unit", "epochs"));
  });
  validated("run", [&] { t.validate(); });
  return cfg;
}

DatasetJob load_dataset_config(const std::filesystem::path& path) {
  return parse_dataset_config(read_file(path), path.parent_path());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

std::string format_run_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto& s = t.schedule;
  std::ostringstream os;
  os << "[run]\n"
     << "regime = " << train::to_string(t.regime) << '\n'
     << "lambda = " << g17(t.lambda) << '\n'
     << "manifest = " << cfg.manifest.string() << '\n'
     << "mask_corruption = " << (cfg.mask_corruption == MaskCorruption::bbox ? "bbox" : "none") << '\n'
     << "seed = " << t.seed << '\n'
     << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "output_dir = " << cfg.output_dir.string() << "\n\n"
     << "[network]\n"
     << "layers = " << model::format_layers(cfg.layers) << "\n\n"
     << "[optim]\n"
     << "adam_lr = " << g17(s.adam_lr) << '\n'
     << "sgd_lr = " << g17(s.sgd_lr) << '\n'
     << "momentum = " << g17(t.momentum) << '\n'
     << "beta1 = " << g17(t.beta1) << '\n'
     << "beta2 = " << g17(t.beta2) << '\n'
     << "eps = " << g17(t.adam_eps) << '\n'
     << "switch_step = " << s.switch_step << '\n'
     << "decay_factor = " << g17(s.decay_factor) << '\n'
     << "decay_interval = " << s.decay_interval << '\n'
     << "decay_unit = " << (s.decay_unit == optim::DecayUnit::steps ? "steps" : "epochs") << '\n'
     << "lr_min = " << g17(s.lr_min) << '\n'
     << "patience = " << s.patience << '\n';
  return os.str();
}

std::string format_dataset_config(const DatasetJob& job) {
  const auto& d = job.dataset;
  std::ostringstream os;
  os << "[dataset]\n"
     << "num_samples = " << d.num_samples << '\n'
     << "image_size = " << d.image_size << '\n'
     << "channels = " << d.channels << '\n'
     << "num_classes = " << d.num_classes << '\n'
     << "class_prob = " << g17(d.class_prob) << '\n'
     << "clutter_density = " << g17(d.clutter_density) << '\n'
     << "clutter_style = " << data::to_string(d.clutter_style) << '\n'
     << "clutter_correlation = " << g17(d.clutter_correlation) << '\n'
     << "background = " << g17(d.background) << '\n'
     << "seed = " << d.seed << '\n'
     << "train_fraction = " << g17(d.train_fraction) << '\n'
     << "val_fraction = " << g17(d.val_fraction) << '\n'
     << "test_fraction = " << g17(d.test_fraction) << '\n'
     << "output_dir = " << job.output_dir.string() << '\n';
  return os.str();
}

}  // namespace lupi::config
