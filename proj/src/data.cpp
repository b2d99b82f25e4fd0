#include "lupi/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lupi/image_io.hpp"

namespace lupi::data {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

// Per-class colour; grayscale images use the mean.
constexpr std::array<std::array<double, 3>, kMaxClasses> kPalette{{
    {0.90, 0.35, 0.30},
    {0.30, 0.85, 0.35},
    {0.35, 0.40, 0.95},
    {0.90, 0.85, 0.30},
    {0.85, 0.35, 0.85},
    {0.30, 0.85, 0.85},
}};
constexpr double kJitter = 0.08;

double snap(double v) { return io::dequantize(io::quantize(std::clamp(v, 0.0, 1.0))); }

std::array<double, 3> class_colour(std::size_t k, std::size_t channels, Rng& rng) {
  const double j = rng.uniform(-kJitter, kJitter);
  std::array<double, 3> c{};
  if (channels == 1) {
    const auto& p = kPalette[k];
    c[0] = snap((p[0] + p[1] + p[2]) / 3.0 + j);
  } else {
    for (int i = 0; i < 3; ++i) c[i] = snap(kPalette[k][i] + j);
  }
  return c;
}

bool shape_contains(ShapeClass s, long dy, long dx, long r) {
  const long ay = std::labs(dy), ax = std::labs(dx);
  switch (s) {
    case ShapeClass::disk: return dy * dy + dx * dx <= r * r;
    case ShapeClass::square: return ay <= r - 1 && ax <= r - 1;
    case ShapeClass::triangle: return dy >= -r && dy <= r && 2 * ax <= dy + r;
    case ShapeClass::cross: {
      const long arm = std::max(1L, r / 3);
      return (ay <= r && ax <= arm) || (ax <= r && ay <= arm);
    }
    case ShapeClass::ring: {
      const long d2 = dy * dy + dx * dx;
      const long inner = std::max(0L, r - 2);
      return d2 <= r * r && d2 > inner * inner;
    }
    case ShapeClass::diamond: return ay + ax <= r;
  }
  return false;
}

std::size_t min_radius(std::size_t size) { return std::max<std::size_t>(2, size / 8); }
std::size_t max_radius(std::size_t size) { return std::max(min_radius(size), size / 4); }

void paint(Tensor& image, std::size_t y, std::size_t x, const std::array<double, 3>& colour) {
  for (std::size_t c = 0; c < image.dim(0); ++c) image.at(c, y, x) = colour[c];
}

}  // namespace

std::string_view to_string(ShapeClass s) {
  static constexpr std::string_view names[] = {"disk", "square", "triangle", "cross", "ring", "diamond"};
  return names[static_cast<int>(s)];
}

std::string_view to_string(ClutterStyle s) { return s == ClutterStyle::lines ? "lines" : "speckles"; }

ClutterStyle parse_clutter_style(std::string_view s) {
  if (s == "lines") return ClutterStyle::lines;
  if (s == "speckles") return ClutterStyle::speckles;
  throw std::invalid_argument("clutter style must be 'lines' or 'speckles', got '" + std::string(s) + "'");
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (num_samples == 0) fail("num_samples", "must be positive");
  if (image_size == 0) fail("image_size", "must be positive");
  if (channels != 1 && channels != 3) fail("channels", "must be 1 or 3");
  if (num_classes == 0 || num_classes > kMaxClasses)
    fail("num_classes", "must be between 1 and " + std::to_string(kMaxClasses));
  if (!(class_prob > 0.0 && class_prob <= 1.0)) fail("class_prob", "must lie in (0,1]");
  if (!(clutter_density >= 0.0 && clutter_density <= 1.0)) fail("clutter_density", "must lie in [0,1]");
  if (!(clutter_correlation >= 0.0 && clutter_correlation <= 1.0))
    fail("clutter_correlation", "must lie in [0,1]");
  if (!(background >= 0.0 && background < 0.2)) fail("background", "must lie in [0,0.2)");
  for (auto [name, f] : {std::pair{"train_fraction", train_fraction}, std::pair{"val_fraction", val_fraction},
                         std::pair{"test_fraction", test_fraction}})
    if (!(f >= 0.0 && f <= 1.0)) fail(name, "must lie in [0,1]");
  if (std::fabs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    fail("train_fraction", "split fractions must sum to 1");
  if (2 * min_radius(image_size) + 1 > image_size)
    fail("image_size", "too small for the smallest shape (" + std::to_string(2 * min_radius(image_size) + 1) +
                           " pixels)");
}

std::size_t DatasetConfig::train_count() const {
  return std::min(num_samples, static_cast<std::size_t>(std::llround(num_samples * train_fraction)));
}
std::size_t DatasetConfig::val_count() const {
  return std::min(num_samples - train_count(),
                  static_cast<std::size_t>(std::llround(num_samples * val_fraction)));
}
std::size_t DatasetConfig::test_count() const { return num_samples - train_count() - val_count(); }

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

Sample generate_sample(const DatasetConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.num_samples)
    throw std::out_of_range("sample index " + std::to_string(index) + " >= num_samples");
  Rng rng(splitmix64(cfg.seed ^ splitmix64(index + 0x5bd1e995ULL)));
  const std::size_t S = cfg.image_size, C = cfg.channels, K = cfg.num_classes;

  // Class presence, conditioned on 1..kMaxObjects objects.
  std::vector<std::size_t> present;
  do {
    present.clear();
    for (std::size_t k = 0; k < K; ++k)
      if (rng.bernoulli(cfg.class_prob)) present.push_back(k);
  } while (present.empty() || present.size() > kMaxObjects);

  Sample s;
  s.id = sample_id(index);
  s.image = Tensor({C, S, S}, snap(cfg.background));
  s.seg_mask = Tensor({1, S, S});
  s.labels = Tensor({K});

  for (std::size_t k : present) {
    s.labels[k] = 1.0;
    const auto shape = static_cast<ShapeClass>(k);
    const long r = static_cast<long>(rng.between(min_radius(S), max_radius(S)));
    const long cy = static_cast<long>(rng.between(r, S - 1 - r));
    const long cx = static_cast<long>(rng.between(r, S - 1 - r));
    const auto colour = class_colour(k, C, rng);
    for (long y = cy - r; y <= cy + r; ++y)
      for (long x = cx - r; x <= cx + r; ++x)
        if (shape_contains(shape, y - cy, x - cx, r)) {
          paint(s.image, y, x, colour);
          s.seg_mask.at(0, y, x) = 1.0;
        }
  }

  auto clutter_colour = [&] {
    const std::size_t k = rng.bernoulli(cfg.clutter_correlation) ? present[rng.below(present.size())]
                                                                  : rng.below(K);
    return class_colour(k, C, rng);
  };
  auto paint_background = [&](long y, long x, const std::array<double, 3>& colour) {
    if (y < 0 || x < 0 || y >= static_cast<long>(S) || x >= static_cast<long>(S)) return;
    if (s.seg_mask.at(0, y, x) != 0.0) return;
    paint(s.image, y, x, colour);
  };

  if (cfg.clutter_style == ClutterStyle::lines) {
    const auto strokes = static_cast<std::size_t>(std::llround(cfg.clutter_density * S / 2.0));
    for (std::size_t i = 0; i < strokes; ++i) {
      const auto colour = clutter_colour();
      const double y0 = rng.uniform(0.0, S), x0 = rng.uniform(0.0, S);
      const double angle = rng.uniform(0.0, M_PI);
      const double len = rng.uniform(S / 3.0, static_cast<double>(S));
      const double dy = std::sin(angle), dx = std::cos(angle);
      const auto steps = static_cast<long>(std::ceil(len));
      for (long t = 0; t <= steps; ++t)
        paint_background(static_cast<long>(std::floor(y0 + dy * t)), static_cast<long>(std::floor(x0 + dx * t)),
                         colour);
    }
  } else {
    const double p = cfg.clutter_density * 0.25;
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        if (rng.bernoulli(p)) {
          const auto colour = clutter_colour();
          paint_background(y, x, colour);
        }
  }
  return s;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Split split_of(const DatasetConfig& cfg, std::size_t index) {
  if (index < cfg.train_count()) return Split::train;
  if (index < cfg.train_count() + cfg.val_count()) return Split::val;
  return Split::test;
}

Tensor corrupt_mask_bbox(const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1)
    throw ShapeError("corrupt_mask_bbox expects [1,H,W], got " + shape_str(mask.shape()));
  const std::size_t H = mask.dim(1), W = mask.dim(2);
  Tensor out = Tensor::zeros_like(mask);
  std::vector<bool> seen(H * W, false);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < H * W; ++start) {
    if (seen[start] || mask[start] == 0.0) continue;
    std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0;
    stack.push_back(start);
    seen[start] = true;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t y = p / W, x = p % W;
      y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
      auto visit = [&](std::size_t q) {
        if (!seen[q] && mask[q] != 0.0) {
          seen[q] = true;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - W);
      if (y + 1 < H) visit(p + W);
      if (x > 0) visit(p - 1);
      if (x + 1 < W) visit(p + 1);
    }
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) out[y * W + x] = 1.0;
  }
  return out;
}

std::string format_manifest_line(const ManifestEntry& e) {
  return e.id + '\t' + e.image_path + '\t' + e.mask_path + '\t' + e.labels + '\t' +
         std::string(to_string(e.split)) + '\n';
}

std::filesystem::path build_manifest(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  const char* ext = cfg.channels == 1 ? ".pgm" : ".ppm";

  std::vector<ManifestEntry> entries(cfg.num_samples);
  const auto n = static_cast<std::ptrdiff_t>(cfg.num_samples);
  std::string error;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const Sample s = generate_sample(cfg, static_cast<std::size_t>(i));
      ManifestEntry e;
      e.id = s.id;
      e.image_path = "images/" + s.id + ext;
      e.mask_path = "masks/" + s.id + ".pgm";
      for (std::size_t k = 0; k < cfg.num_classes; ++k) e.labels += s.labels[k] != 0.0 ? '1' : '0';
      e.split = split_of(cfg, static_cast<std::size_t>(i));
      io::write_image(s.image, out_dir / e.image_path);
      io::write_pgm(s.seg_mask, out_dir / e.mask_path);
      entries[i] = std::move(e);
    } catch (const std::exception& ex) {
#pragma omp critical
      if (error.empty()) error = ex.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);

  const fs::path manifest = out_dir / "manifest.tsv";
  std::ofstream os(manifest, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + manifest.string());
  for (const auto& e : entries) os << format_manifest_line(e);
  if (!os) throw std::runtime_error("failed writing " + manifest.string());
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 5)
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) + ": expected 5 fields, got " +
                               std::to_string(fields.size()));
    ManifestEntry e{fields[0], fields[1], fields[2], fields[3], parse_split(fields[4])};
    if (e.labels.empty() || e.labels.find_first_not_of("01") != std::string::npos)
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) + ": bad label string");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Sample> load_split(const std::filesystem::path& manifest_path, Split split, bool load_masks) {
  const auto entries = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  std::vector<Sample> out;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    Sample s;
    s.id = e.id;
    s.image = io::read_image(root / e.image_path);
    if (load_masks) s.seg_mask = io::read_pgm(root / e.mask_path);
    s.labels = Tensor({e.labels.size()});
    for (std::size_t k = 0; k < e.labels.size(); ++k) s.labels[k] = e.labels[k] == '1' ? 1.0 : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_split(const DatasetConfig& cfg, Split split) {
  cfg.validate();
  std::size_t begin = 0, count = cfg.train_count();
  if (split == Split::val) begin = cfg.train_count(), count = cfg.val_count();
  if (split == Split::test) begin = cfg.train_count() + cfg.val_count(), count = cfg.test_count();
  std::vector<Sample> out(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = generate_sample(cfg, begin + i);
  return out;
}

}  // namespace lupi::data
