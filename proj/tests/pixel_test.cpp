#include "stalereg/pixel.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "stalereg/rng.hpp"

namespace stalereg::pixel {
namespace {

GrayImage fixture() { return read_pgm(std::filesystem::path(STALEREG_DATA_DIR) / "test128.pgm"); }

GrayImage crop(const GrayImage& img, std::uint32_t w, std::uint32_t h) {
  GrayImage out(w, h);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) out.at(x, y) = img.at(x, y);
  }
  return out;
}

/// Leaks of a kernel that leaves uniform (0, 1) floats in the fragment registers.
std::vector<LeakQuad> noise_quads(const sim::GpuConfig& cfg, std::uint32_t groups, std::uint64_t seed) {
  sim::Simulator s(cfg);
  const auto model = cfg.register_model;
  sim::NativeKernel k{"noise", 4, [=](sim::WaveContext& ctx) {
                        Rng rng(mix_seed(seed, std::uint64_t{ctx.group()} << 8 | ctx.wave()));
                        for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
                          for (std::uint32_t c = 0; c < 4; ++c) {
                            ctx.write_float(isa::RegisterRef::from_cell(c, model), l, rng.open_unit_float());
                          }
                        }
                      }};
  return leak(s, sim::Dispatch::of(std::move(k), groups, 256, {}));
}

TEST(Render, OneGroupPerTile) {
  sim::Simulator s(sim::profile("agx"));
  const auto d = render_victim(s, crop(fixture(), 64, 64), 16);
  EXPECT_EQ(d.group_count, 16u);
  EXPECT_EQ(d.group_size, 256u);
  // Odd sizes are padded to whole tiles.
  EXPECT_EQ(render_victim(s, crop(fixture(), 40, 20), 16).group_count, 6u);
}

TEST(Render, ShaderMatchesFixtureSemantics) {
  const auto p = fragment_shader();
  EXPECT_EQ(p.instructions.back().op, isa::Opcode::Exit);
  const auto& alpha = p.instructions[6];
  EXPECT_EQ(alpha.op, isa::Opcode::MovImm);
  EXPECT_EQ(std::get<isa::Immediate>(alpha.srcs[0]).bits, 0x3f800000u);
  EXPECT_TRUE(isa::read_set_before_write(p).empty());
}

TEST(Leak, ConstantWhiteImage) {
  for (const char* name : {"agx", "adreno"}) {
    sim::Simulator s(sim::profile(name));
    const auto quads = leak(s, render_victim(s, GrayImage(32, 32, 1.0f), 16));
    ASSERT_EQ(quads.size(), 4u * 256u);
    for (const auto& q : quads) {
      for (float v : q.values) ASSERT_EQ(v, 1.0f) << name;
    }
  }
}

TEST(Leak, StoreResidueProfileSeesNoFragments) {
  // Tile stores bypass the coalescing residue.
  sim::Simulator s(sim::profile("nvidia"));
  const auto quads = leak(s, render_victim(s, crop(fixture(), 32, 32), 16));
  EXPECT_TRUE(identify_fragments(quads).empty());
}

TEST(Identify, PureVictimStream) {
  sim::Simulator s(sim::profile("agx"));
  const auto quads = leak(s, render_victim(s, crop(fixture(), 64, 64), 16));
  EXPECT_EQ(identify_fragments(quads).size(), quads.size());
}

TEST(Identify, UniformNoiseYieldsNothing) {
  EXPECT_TRUE(identify_fragments(noise_quads(sim::profile("agx"), 16, 1)).empty());
}

TEST(Identify, HalfVictimHalfNoise) {
  const auto cfg = sim::profile("agx");
  sim::Simulator s(cfg);
  auto quads = leak(s, render_victim(s, crop(fixture(), 64, 64), 16));
  const std::size_t victim_count = quads.size();
  for (auto& q : quads) q.group += 1000;  // provenance tag
  const auto noise = noise_quads(cfg, 16, 7);
  quads.insert(quads.end(), noise.begin(), noise.end());
  Rng rng(7);
  rng.shuffle(std::span<LeakQuad>(quads));

  const auto found = identify_fragments(quads);
  const auto true_pos = static_cast<double>(
      std::count_if(found.begin(), found.end(), [](const auto& f) { return f.group >= 1000; }));
  const double precision = found.empty() ? 0.0 : true_pos / static_cast<double>(found.size());
  const double recall = true_pos / static_cast<double>(victim_count);
  EXPECT_GE(precision, 0.95);
  EXPECT_GE(recall, 0.95);
}

TEST(Identify, MarkerMustDominate) {
  std::vector<LeakQuad> quads(10);
  for (auto& q : quads) q.values = {0.25f, 0.25f, 0.25f, 0.25f};
  quads[0].values[3] = 1.0f;
  quads[1].values[3] = 1.0f;
  EXPECT_TRUE(identify_fragments(quads).empty());
  for (auto& q : quads) q.values[3] = 1.0f;
  EXPECT_EQ(identify_fragments(quads).size(), 10u);
}

TEST(Calibrate, MappingIsBijective) {
  for (const char* name : {"agx", "adreno"}) {
    for (std::uint32_t tile : {4u, 8u, 16u, 32u}) {
      const auto m = calibrate_mapping(sim::profile(name), tile);
      EXPECT_TRUE(m.bijective()) << name << ' ' << tile;
    }
  }
}

TEST(Grayscale, CollapseRule) {
  PixelMapping m;
  m.tile = 2;
  m.wave_width = 4;
  m.coords = {std::array<std::uint32_t, 2>{0, 0}, std::array<std::uint32_t, 2>{1, 0},
              std::array<std::uint32_t, 2>{0, 1}, std::nullopt};
  std::vector<FragmentRecord> f{
      {{0.5f, 0.5f, 0.5f, 1.0f}, 0, 0, 0},
      {{0.2f, 1.0f, 0.8f, 0.5f}, 0, 0, 1},
      {{1.0f, 1.0f, 1.0f, 1.0f}, 0, 0, 2},
  };
  const auto tiles = to_grayscale(f, m);
  ASSERT_EQ(tiles.size(), 1u);
  EXPECT_FLOAT_EQ(tiles[0].at(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(tiles[0].at(1, 0), 0.5f);
  EXPECT_FLOAT_EQ(tiles[0].at(0, 1), 1.0f);
  EXPECT_EQ(tiles[0].at(1, 1), 0.0f);
  EXPECT_TRUE(tiles[0].hole[3]);
  EXPECT_TRUE(tiles[0].has_holes);
}

TEST(Grayscale, NoiseFreeLeakGivesCompleteSourceTiles) {
  for (const char* name : {"agx", "adreno"}) {
    const auto cfg = sim::profile(name);
    const auto img = crop(fixture(), 64, 64);
    sim::Simulator s(cfg);
    const auto quads = leak(s, render_victim(s, img, 16));
    const auto tiles = to_grayscale(identify_fragments(quads), calibrate_mapping(cfg, 16));
    const auto truth = split_tiles(img, 16);
    ASSERT_EQ(tiles.size(), 16u) << name;
    for (const auto& t : tiles) {
      EXPECT_FALSE(t.has_holes);
      EXPECT_EQ(t.values, truth[t.group].values) << name << " tile " << t.group;
    }
  }
}

TEST(Attack, EightByEightPipeline) {
  const auto cfg = sim::profile("agx");
  jigsaw::GaParams ga;
  ga.seed = cfg.seed;
  const auto res = attack(cfg, fixture(), 16, ga);
  ASSERT_EQ(res.tiles.size(), 64u);
  std::vector<std::size_t> truth(64);
  for (std::size_t i = 0; i < 64; ++i) truth[res.tiles[i].group] = i;
  EXPECT_GE(jigsaw::neighbor_accuracy(res.solution.arrangement, truth, 8, 8), 0.95);
  EXPECT_EQ(res.reconstruction.width, 128u);
}

TEST(Attack, JitteredSchedulingStillReassembles) {
  auto cfg = sim::profile("agx");
  cfg.jitter = true;
  const auto img = crop(fixture(), 64, 64);
  const auto res = attack(cfg, img, 16);
  // Under jitter attacker groups do not name victim tiles; truth is by content.
  const auto source = split_tiles(img, 16);
  std::vector<std::size_t> truth(16);
  for (std::size_t i = 0; i < 16; ++i) {
    const auto it = std::find_if(source.begin(), source.end(),
                                 [&](const Tile& t) { return t.values == res.tiles[i].values; });
    ASSERT_NE(it, source.end());
    truth[static_cast<std::size_t>(it - source.begin())] = i;
  }
  EXPECT_GE(jigsaw::neighbor_accuracy(res.solution.arrangement, truth, 4, 4), 0.95);
}

}  // namespace
}  // namespace stalereg::pixel
