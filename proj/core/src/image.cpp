#include "stalereg/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "stalereg/rng.hpp"

namespace stalereg {

namespace {

// Next PGM header token, skipping whitespace and `#` comments.
std::uint32_t header_value(std::istream& in) {
  int c = in.get();
  while (in) {
    if (c == '#') {
      while (in && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (!in || !std::isdigit(c)) throw ImageError("malformed PGM header");
  std::uint64_t v = 0;
  while (in && std::isdigit(c)) {
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
    if (v > 1u << 20) throw ImageError("PGM header value too large");
    c = in.get();
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (!std::isspace(c)) throw ImageError("malformed PGM header");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

GrayImage read_pgm(std::istream& in) {
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw ImageError("not a binary PGM (P5)");
  const auto w = header_value(in);
  const auto h = header_value(in);
  const auto maxval = header_value(in);
  if (w == 0 || h == 0) throw ImageError("PGM has zero size");
  if (maxval == 0 || maxval > 255) throw ImageError("only 8-bit PGM is supported");
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ImageError("truncated PGM raster");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return read_pgm(in);
}

void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), raw.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  write_pgm(out, img);
  if (!out) throw ImageError("write failed: " + path.string());
}

GrayImage quantize8(const GrayImage& img) {
  GrayImage out = img;
  for (auto& v : out.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

GrayImage make_plasma(std::uint32_t size, std::uint64_t seed, double roughness) {
  if (size < 2 || (size & (size - 1)) != 0) throw ImageError("plasma size must be a power of two");
  const std::uint32_t n = size + 1;
  std::vector<double> g(static_cast<std::size_t>(n) * n, 0.0);
  auto at = [&](std::uint32_t x, std::uint32_t y) -> double& { return g[std::size_t{y} * n + x]; };
  Rng rng(seed);
  auto jitter = [&](double scale) { return (rng.uniform01() * 2.0 - 1.0) * scale; };

  at(0, 0) = rng.uniform01();
  at(size, 0) = rng.uniform01();
  at(0, size) = rng.uniform01();
  at(size, size) = rng.uniform01();
  double scale = 0.5;
  for (std::uint32_t step = size; step > 1; step /= 2) {
    const auto half = step / 2;
    for (std::uint32_t y = half; y < n; y += step) {
      for (std::uint32_t x = half; x < n; x += step) {
        const double avg = (at(x - half, y - half) + at(x + half, y - half) +
                            at(x - half, y + half) + at(x + half, y + half)) / 4.0;
        at(x, y) = avg + jitter(scale);
      }
    }
    for (std::uint32_t y = 0; y < n; y += half) {
      for (std::uint32_t x = (y / half) % 2 == 0 ? half : 0; x < n; x += step) {
        double sum = 0.0;
        int count = 0;
        if (x >= half) { sum += at(x - half, y); ++count; }
        if (x + half < n) { sum += at(x + half, y); ++count; }
        if (y >= half) { sum += at(x, y - half); ++count; }
        if (y + half < n) { sum += at(x, y + half); ++count; }
        at(x, y) = sum / count + jitter(scale);
      }
    }
    scale *= roughness;
  }

  double lo = g[0], hi = g[0];
  for (std::uint32_t y = 0; y < size; ++y) {
    for (std::uint32_t x = 0; x < size; ++x) {
      lo = std::min(lo, at(x, y));
      hi = std::max(hi, at(x, y));
    }
  }
  GrayImage img(size, size);
  for (std::uint32_t y = 0; y < size; ++y) {
    for (std::uint32_t x = 0; x < size; ++x) {
      img.at(x, y) = static_cast<float>((at(x, y) - lo) / (hi - lo));
    }
  }
  return quantize8(img);
}

GrayImage pad_to_multiple(const GrayImage& img, std::uint32_t multiple) {
  if (multiple == 0) throw ImageError("padding multiple must be >= 1");
  const auto w = (img.width + multiple - 1) / multiple * multiple;
  const auto h = (img.height + multiple - 1) / multiple * multiple;
  if (w == img.width && h == img.height) return img;
  GrayImage out(w, h);
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) out.at(x, y) = img.at(x, y);
  }
  return out;
}

}  // namespace stalereg
