// lupi: dataset generation, training, evaluation and mask export.
//
//   lupi gen-data <cfg>
//   lupi train <cfg>
//   lupi eval <checkpoint> <manifest> <split> [--out DIR]
//   lupi visualize <checkpoint> <image> <outdir>
//
// Exit codes: 0 success, 1 usage error, 2 runtime or data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lupi/config.hpp"
#include "lupi/data.hpp"
#include "lupi/image_io.hpp"
#include "lupi/metrics.hpp"
#include "lupi/model.hpp"
#include "lupi/train.hpp"

namespace fs = std::filesystem;
using namespace lupi;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

int cmd_gen_data(const fs::path& cfg_path) {
  const auto job = config::load_dataset_config(cfg_path);
  fs::create_directories(job.output_dir);
  const auto manifest = data::build_manifest(job.dataset, job.output_dir);
  // The copy stored with the data points at its own directory so the tree is relocatable.
  auto stored = job;
  stored.output_dir = ".";
  write_text(job.output_dir / "dataset.ini", config::format_dataset_config(stored));
  std::cout << "wrote " << job.dataset.num_samples << " samples (" << job.dataset.train_count() << " train, "
            << job.dataset.val_count() << " val, " << job.dataset.test_count() << " test) to "
            << manifest.string() << '\n';
  return 0;
}

std::vector<data::Sample> load_for_training(const config::RunConfig& cfg, data::Split split) {
  const bool masks = train::regime_needs_masks(cfg.train.regime);
  auto samples = data::load_split(cfg.manifest, split, masks);
  if (masks && cfg.mask_corruption == config::MaskCorruption::bbox)
    for (auto& s : samples) s.seg_mask = data::corrupt_mask_bbox(s.seg_mask);
  return samples;
}

int cmd_train(const fs::path& cfg_path) {
  const auto cfg = config::load_run_config(cfg_path);
  const auto train_set = load_for_training(cfg, data::Split::train);
  // Validation only drives mAP and the switch rule; masks are never needed.
  const auto val_set = data::load_split(cfg.manifest, data::Split::val, false);
  if (train_set.empty()) throw std::runtime_error("manifest has no train samples");
  const auto spec = train::make_spec(cfg.layers, train_set.front(), cfg.train.regime);

  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.ini", config::format_run_config(cfg));
  std::ofstream log(cfg.output_dir / "train.log", std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log");

  auto result = train::train(spec, train_set, val_set, cfg.train, [&](const train::EpochLog& e) {
    const auto line = train::format_log_line(e);
    log << line << std::flush;
    std::cout << line << std::flush;
  });
  model::save_checkpoint(result.net, cfg.output_dir / "checkpoint.pfck");
  std::cout << "checkpoint: " << (cfg.output_dir / "checkpoint.pfck").string() << '\n';
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& manifest, const std::string& split_name, fs::path out_dir) {
  const auto net = model::load_checkpoint(ckpt);
  const auto split = data::parse_split(split_name);
  const auto samples = data::load_split(manifest, split, true);
  if (samples.empty()) throw std::runtime_error("split '" + split_name + "' is empty");
  const auto& spec = net.spec();
  const Shape want{spec.image_channels(), spec.in_h, spec.in_w};
  if (samples.front().image.shape() != want || samples.front().labels.size() != spec.num_classes)
    throw std::runtime_error("checkpoint expects images " + shape_str(want) + " with " +
                             std::to_string(spec.num_classes) + " classes, manifest has " +
                             shape_str(samples.front().image.shape()) + " with " +
                             std::to_string(samples.front().labels.size()));

  const auto report = train::evaluate(net, samples);
  if (out_dir.empty()) out_dir = ckpt.parent_path() / ("eval_" + split_name);
  fs::create_directories(out_dir);
  const auto tsv = metrics::report_to_tsv(report);
  write_text(out_dir / "report.tsv", tsv);
  write_text(out_dir / "report.json", metrics::report_to_json(report));
  for (std::size_t k = 0; k < report.pr_curves.size(); ++k)
    write_text(out_dir / ("pr_class" + std::to_string(k) + ".tsv"), metrics::pr_curve_to_tsv(report.pr_curves[k]));
  std::cout << tsv;
  return 0;
}

int cmd_visualize(const fs::path& ckpt, const fs::path& image_path, const fs::path& out_dir) {
  const auto net = model::load_checkpoint(ckpt);
  const Tensor image = io::read_image(image_path);
  const auto mask = train::visualization_mask(net, image);
  fs::create_directories(out_dir);
  const std::string stem = image_path.stem().string();
  io::write_pgm(mask.values, out_dir / (stem + "_mask.pgm"));
  io::write_ppm(train::red_overlay(image, mask.values), out_dir / (stem + "_overlay.ppm"));
  std::cout << "wrote " << (out_dir / (stem + "_mask.pgm")).string() << " and "
            << (out_dir / (stem + "_overlay.ppm")).string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency-guided training with privileged segmentation masks"};
  app.require_subcommand(1);

  std::string gen_cfg, train_cfg, ckpt, manifest, split, image, out_dir, eval_out;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset described by a config");
  gen->add_option("config", gen_cfg)->required();
  auto* tr = app.add_subcommand("train", "train a network under one of the five regimes");
  tr->add_option("config", train_cfg)->required();
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  ev->add_option("checkpoint", ckpt)->required();
  ev->add_option("manifest", manifest)->required();
  ev->add_option("split", split)->required()->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", eval_out, "report directory (default: <checkpoint dir>/eval_<split>)");
  auto* vis = app.add_subcommand("visualize", "export the visualization mask and a red overlay");
  vis->add_option("checkpoint", ckpt)->required();
  vis->add_option("image", image)->required();
  vis->add_option("outdir", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_cfg);
    if (*tr) return cmd_train(train_cfg);
    if (*ev) return cmd_eval(ckpt, manifest, split, eval_out);
    if (*vis) return cmd_visualize(ckpt, image, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
