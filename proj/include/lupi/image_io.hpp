#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lupi/tensor.hpp"

namespace lupi::io {

class ImageIoError : public std::runtime_error {
 public:
  enum class Kind { io, malformed_header, dimension_overflow, truncated, bad_value };
  ImageIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// round-half-to-even of v*255; v must lie in [0,1].
std::uint8_t quantize(double v);
// What a value becomes after a write/read round trip.
double dequantize(std::uint8_t q);
Tensor quantized(const Tensor& t);

// Binary netpbm, maxval 255. [1,H,W] <-> P5, [3,H,W] <-> P6.
std::vector<unsigned char> encode_netpbm(const Tensor& t);
Tensor decode_netpbm(const std::vector<unsigned char>& bytes);

void write_pgm(const Tensor& t, const std::filesystem::path& path);
void write_ppm(const Tensor& t, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);
// Either format, chosen by magic.
Tensor read_image(const std::filesystem::path& path);
// PGM for one channel, PPM for three.
void write_image(const Tensor& t, const std::filesystem::path& path);

}  // namespace lupi::io
