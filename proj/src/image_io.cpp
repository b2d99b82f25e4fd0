#include "lupi/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace lupi::io {

namespace {

constexpr std::uint64_t kMaxPixels = std::uint64_t{1} << 28;

using Kind = ImageIoError::Kind;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageIoError(Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void dump(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageIoError(Kind::io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ImageIoError(Kind::io, "failed writing " + path.string());
}

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<unsigned char>& b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::uint64_t number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_]))
      throw ImageIoError(Kind::malformed_header, std::string("malformed header: expected ") + field);
    std::uint64_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      const unsigned d = b_[pos_] - '0';
      if (v > (std::numeric_limits<std::uint64_t>::max() - d) / 10)
        throw ImageIoError(Kind::dimension_overflow, std::string("header ") + field + " overflows");
      v = v * 10 + d;
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw ImageIoError(Kind::malformed_header, "malformed header: missing separator before raster");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint8_t quantize(double v) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ImageIoError(Kind::bad_value, "pixel value " + std::to_string(v) + " outside [0,1]");
  // Default floating-point environment rounds to nearest, ties to even.
  return static_cast<std::uint8_t>(std::nearbyint(v * 255.0));
}

double dequantize(std::uint8_t q) { return static_cast<double>(q) / 255.0; }

Tensor quantized(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = dequantize(quantize(v));
  return out;
}

std::vector<unsigned char> encode_netpbm(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw ImageIoError(Kind::bad_value, "netpbm export needs [1,H,W] or [3,H,W], got " + shape_str(t.shape()));
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  const std::string header = std::string(C == 1 ? "P5" : "P6") + "\n" + std::to_string(W) + " " +
                             std::to_string(H) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + C * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) out.push_back(quantize(t.at(c, y, x)));
  return out;
}

Tensor decode_netpbm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ImageIoError(Kind::malformed_header, "malformed header: expected P5 or P6 magic");
  const std::size_t C = bytes[1] == '5' ? 1 : 3;
  HeaderParser p(bytes);
  p.advance(2);
  const auto W = p.number("width");
  const auto H = p.number("height");
  const auto maxval = p.number("maxval");
  p.single_space();
  if (W == 0 || H == 0) throw ImageIoError(Kind::malformed_header, "malformed header: zero dimension");
  if (W > kMaxPixels || H > kMaxPixels || W * H > kMaxPixels)
    throw ImageIoError(Kind::dimension_overflow, "image dimensions " + std::to_string(W) + "x" +
                                                     std::to_string(H) + " exceed the supported size");
  if (maxval == 0 || maxval > 255)
    throw ImageIoError(Kind::malformed_header, "unsupported maxval " + std::to_string(maxval));
  const std::size_t need = static_cast<std::size_t>(W * H * C);
  if (bytes.size() - p.pos() < need)
    throw ImageIoError(Kind::truncated, "truncated raster: need " + std::to_string(need) + " bytes, have " +
                                            std::to_string(bytes.size() - p.pos()));
  Tensor t({C, static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  std::size_t k = p.pos();
  const double scale = static_cast<double>(maxval);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const unsigned q = bytes[k++];
        if (q > maxval) throw ImageIoError(Kind::bad_value, "sample exceeds maxval");
        t.at(c, y, x) = maxval == 255 ? dequantize(static_cast<std::uint8_t>(q)) : q / scale;
      }
  return t;
}

void write_pgm(const Tensor& t, const std::filesystem::path& path) {
  if (t.rank() != 3 || t.dim(0) != 1)
    throw ImageIoError(Kind::bad_value, "PGM needs [1,H,W], got " + shape_str(t.shape()));
  dump(encode_netpbm(t), path);
}

void write_ppm(const Tensor& t, const std::filesystem::path& path) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw ImageIoError(Kind::bad_value, "PPM needs [3,H,W], got " + shape_str(t.shape()));
  dump(encode_netpbm(t), path);
}

Tensor read_pgm(const std::filesystem::path& path) {
  auto bytes = slurp(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] != '5')
    throw ImageIoError(Kind::malformed_header, path.string() + " is not a binary PGM");
  return decode_netpbm(bytes);
}

Tensor read_ppm(const std::filesystem::path& path) {
  auto bytes = slurp(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] != '6')
    throw ImageIoError(Kind::malformed_header, path.string() + " is not a binary PPM");
  return decode_netpbm(bytes);
}

Tensor read_image(const std::filesystem::path& path) { return decode_netpbm(slurp(path)); }

void write_image(const Tensor& t, const std::filesystem::path& path) { dump(encode_netpbm(t), path); }

}  // namespace lupi::io
