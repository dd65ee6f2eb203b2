#pragma once

// Tiled-rendering victim and the fragment leak pipeline:
// render -> leak quads -> identify fragments -> grayscale tiles -> jigsaw.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stalereg/image.hpp"
#include "stalereg/isa.hpp"
#include "stalereg/jigsaw.hpp"
#include "stalereg/sim.hpp"

namespace stalereg::pixel {

inline constexpr float kAlphaMarker = 1.0f;

/// Texture channels in b0..b2, tile memory in b3; r3 carries alpha.
isa::Program fragment_shader(isa::RegisterModel model = isa::RegisterModel::Scalar);
/// Copies the four stale fragment registers to b0..b3 at tid.
isa::Program fragment_attacker(isa::RegisterModel model = isa::RegisterModel::Scalar);

struct Tile {
  std::uint32_t size = 0;
  std::vector<float> values;
  /// Pixels no fragment covered; their value is 0.
  std::vector<bool> hole;
  bool has_holes = false;
  /// Attacker thread group the tile was leaked from.
  std::uint32_t group = 0;

  float at(std::uint32_t x, std::uint32_t y) const { return values[std::size_t{y} * size + x]; }
};

/// Row-major tiles of an image whose sides are multiples of `tile`.
std::vector<Tile> split_tiles(const GrayImage& img, std::uint32_t tile);
GrayImage assemble(std::span<const Tile> tiles, std::span<const std::size_t> arrangement,
                   std::uint32_t grid_w, std::uint32_t grid_h);
jigsaw::Piece to_piece(const Tile& t);

/// One thread group per tile, thread order y * tile + x inside a tile.
/// Channels are per-pixel values in image row-major order.
sim::Dispatch render_victim(sim::Simulator& sim, const GrayImage& r, const GrayImage& g,
                            const GrayImage& b, std::uint32_t tile);
/// Grayscale image rendered with r = g = b; zero-padded to whole tiles.
sim::Dispatch render_victim(sim::Simulator& sim, const GrayImage& img, std::uint32_t tile);
/// Same shader over uniform (0, 1) textures.
sim::Dispatch noise_victim(sim::Simulator& sim, std::uint32_t groups, std::uint32_t group_size,
                           std::uint64_t seed);

/// Four leaked values plus the attacker lane that observed them.
struct LeakQuad {
  std::array<float, 4> values{};
  std::uint32_t group = 0;
  std::uint32_t wave = 0;
  std::uint32_t lane = 0;
};

/// Runs the attacker co-resident with `victim` (same group count and size).
std::vector<LeakQuad> leak(sim::Simulator& sim, const sim::Dispatch& victim);

struct FragmentRecord {
  std::array<float, 4> rgba{};
  std::uint32_t group = 0;
  std::uint32_t wave = 0;
  std::uint32_t lane = 0;
};

struct IdentifyOptions {
  float marker = kAlphaMarker;
  /// Quads containing the marker must outnumber quads containing any other
  /// value by this factor.
  double min_ratio = 1.0;
};

/// Quads holding the exact marker, provided the marker dominates the stream.
std::vector<FragmentRecord> identify_fragments(std::span<const LeakQuad> quads,
                                               const IdentifyOptions& options = {});

/// (wave, lane) -> (x, y) inside a tile.
struct PixelMapping {
  std::uint32_t tile = 0;
  std::uint32_t wave_width = 0;
  /// Indexed by wave * wave_width + lane.
  std::vector<std::optional<std::array<std::uint32_t, 2>>> coords;

  bool bijective() const;
};

/// Renders a shader that encodes each pixel's position in its color and leaks it.
PixelMapping calibrate_mapping(const sim::GpuConfig& cfg, std::uint32_t tile);

/// One tile per attacker group, ascending group order. A pixel's intensity
/// is the mean of its distinct non-marker channels (values within
/// `tolerance` count as one).
std::vector<Tile> to_grayscale(std::span<const FragmentRecord> fragments,
                               const PixelMapping& mapping, float tolerance = 1.0f / 512.0f);

struct AttackResult {
  GrayImage reconstruction;
  std::vector<Tile> tiles;
  std::uint32_t grid_w = 0;
  std::uint32_t grid_h = 0;
  std::size_t quads = 0;
  std::size_t fragments = 0;
  jigsaw::Solution solution;
};

/// Full pipeline against a freshly constructed simulator.
AttackResult attack(const sim::GpuConfig& cfg, const GrayImage& img, std::uint32_t tile,
                    const jigsaw::GaParams& ga = {});

}  // namespace stalereg::pixel
