#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace stalereg {

/// Single-channel image, intensities in [0, 1], row-major.
struct GrayImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::uint32_t w, std::uint32_t h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(std::uint32_t x, std::uint32_t y) { return pixels[std::size_t{y} * width + x]; }
  float at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5), maxval <= 255.
GrayImage read_pgm(std::istream& in);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(std::ostream& out, const GrayImage& img);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

/// Rounds to the 8-bit grid, the precision PGM can carry.
GrayImage quantize8(const GrayImage& img);

/// Diamond-square fractal; `size` is a power of two. Smaller roughness gives
/// smoother images.
GrayImage make_plasma(std::uint32_t size, std::uint64_t seed, double roughness = 0.55);

/// Zero-padded copy whose dimensions are multiples of `multiple`.
GrayImage pad_to_multiple(const GrayImage& img, std::uint32_t multiple);

}  // namespace stalereg
