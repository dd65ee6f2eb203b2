#include "stalereg/cnn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <limits>
#include <numeric>

#include "stalereg/rng.hpp"

namespace stalereg::cnn {
namespace {

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

// Independent conv in the documented accumulation order.
std::vector<float> oracle_conv(const CnnModel& m, const GrayImage& img) {
  std::vector<float> out;
  for (std::uint32_t f = 0; f < kFilters; ++f) {
    for (std::uint32_t oy = 0; oy < kConvSide; ++oy) {
      for (std::uint32_t ox = 0; ox < kConvSide; ++ox) {
        float acc = 0.0f;
        for (std::uint32_t k = 0; k < kKernel * kKernel; ++k) {
          acc += m.conv_w[f * 25 + k] * img.pixels[(oy + k / 5) * kInput + ox + k % 5];
        }
        out.push_back(acc + m.conv_b[f]);
      }
    }
  }
  return out;
}

TEST(Model, BiasesAreNonZero) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (float b : make_model(s).conv_b) EXPECT_NE(b, 0.0f);
  }
}

TEST(Forward, ReferenceMatchesOracleConv) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto m = make_model(s);
    const auto img = make_input(s);
    EXPECT_TRUE(bit_equal(reference_forward(m, img).conv, oracle_conv(m, img))) << s;
  }
}

TEST(Forward, SimulatedLayersMatchReferenceBitForBit) {
  for (const char* name : {"nvidia", "adreno"}) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      sim::Simulator sim(sim::profile(name));
      const auto m = make_model(s);
      const auto img = make_input(s + 1000);
      const auto got = forward(sim, m, img).activations;
      const auto want = reference_forward(m, img);
      ASSERT_TRUE(bit_equal(got.conv, want.conv)) << name << ' ' << s;
      ASSERT_TRUE(bit_equal(got.relu, want.relu)) << name << ' ' << s;
      ASSERT_TRUE(bit_equal(got.pool, want.pool)) << name << ' ' << s;
      ASSERT_TRUE(bit_equal(got.logits, want.logits)) << name << ' ' << s;
    }
  }
}

TEST(Forward, ImpulseResponseIsTheFlippedKernel) {
  const auto m = make_model(3);
  GrayImage img(kInput, kInput);
  const std::uint32_t x0 = 13, y0 = 9;
  img.at(x0, y0) = 1.0f;
  const auto conv = reference_forward(m, img).conv;
  for (std::uint32_t f = 0; f < kFilters; ++f) {
    for (std::uint32_t oy = 0; oy < kConvSide; ++oy) {
      for (std::uint32_t ox = 0; ox < kConvSide; ++ox) {
        const bool inside = x0 >= ox && x0 < ox + kKernel && y0 >= oy && y0 < oy + kKernel;
        const float w = inside ? m.conv_w[f * 25 + (y0 - oy) * 5 + (x0 - ox)] : 0.0f;
        ASSERT_EQ(conv[f * kConvSize + oy * kConvSide + ox], w + m.conv_b[f]);
      }
    }
  }
}

TEST(Forward, RejectsWrongInputSize) {
  sim::Simulator sim(sim::profile("nvidia"));
  EXPECT_THROW(forward(sim, make_model(1), GrayImage(27, 28)), std::invalid_argument);
  EXPECT_THROW(reference_forward(make_model(1), GrayImage(28, 29)), std::invalid_argument);
}

TEST(Nvidia, MaskIsFirstHalfOfEveryWave) {
  const auto leak = attack_nvidia(sim::profile("nvidia"), make_model(1), make_input(1));
  ASSERT_EQ(leak.mask.size(), kFilters * kConvSize);
  for (std::size_t i = 0; i < leak.mask.size(); ++i) {
    ASSERT_EQ(leak.mask[i], (i % kConvSize) % 32 < 16 ? 1 : 0) << i;
  }
  EXPECT_DOUBLE_EQ(leak.density, 0.5);
  EXPECT_EQ(leak.segments.size(), kFilters * kConvSize / 32);
}

TEST(Nvidia, LowerFirstOrderLeaksUpperHalves) {
  auto cfg = sim::profile("nvidia");
  cfg.half_wave_order = sim::HalfWaveOrder::LowerFirst;
  const auto leak = attack_nvidia(cfg, make_model(1), make_input(1));
  for (std::size_t i = 0; i < leak.mask.size(); ++i) {
    ASSERT_EQ(leak.mask[i], (i % kConvSize) % 32 >= 16 ? 1 : 0) << i;
  }
  for (const auto& s : leak.segments) EXPECT_EQ(s.position % 32, 16u);
}

TEST(Nvidia, SegmentsAreBitEqualToConvOutput) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto leak = attack_nvidia(sim::profile("nvidia"), make_model(seed), make_input(seed));
    for (const auto& s : leak.segments) {
      for (std::size_t i = 0; i < 16; ++i) {
        ASSERT_EQ(std::bit_cast<std::uint32_t>(s.values[i]),
                  std::bit_cast<std::uint32_t>(leak.victim.conv[s.position + i]));
      }
    }
  }
}

TEST(Stitch, OverlapCost) {
  const std::vector<float> a{0, 0, 1, 2}, b{1, 3, 9, 9};
  EXPECT_DOUBLE_EQ(overlap_cost(a, b, 2), 1.0);
  EXPECT_DOUBLE_EQ(overlap_cost(a, a, 0), 0.0);
}

double chain_cost(std::span<const LeakSegment> segs, const std::vector<std::size_t>& order) {
  double c = 0.0;
  for (std::size_t k = 1; k < order.size(); ++k) c += overlap_cost(segs[order[k - 1]].values, segs[order[k]].values);
  return c;
}

TEST(Stitch, GreedyFindsTheBruteForceOptimumOnSmoothSignals) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t n = 3 + rng.below(5);  // up to 7 segments
    std::vector<float> signal(8 * (n + 1));
    float v = 0.0f;
    for (auto& x : signal) x = (v += static_cast<float>(rng.uniform01()));  // strictly increasing
    std::vector<LeakSegment> segs(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::copy_n(signal.begin() + static_cast<std::ptrdiff_t>(8 * k), 16, segs[k].values.begin());
    }
    std::vector<std::size_t> shuffled(n);
    std::iota(shuffled.begin(), shuffled.end(), 0);
    rng.shuffle(std::span<std::size_t>(shuffled));
    std::vector<LeakSegment> input;
    for (auto i : shuffled) input.push_back(segs[i]);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do best = std::min(best, chain_cost(input, perm));
    while (std::next_permutation(perm.begin(), perm.end()));

    const auto r = reconstruct_overlap(input, 8, 8);
    EXPECT_DOUBLE_EQ(r.cost, best) << seed;
    EXPECT_DOUBLE_EQ(chain_cost(input, r.order), r.cost);
    ASSERT_EQ(r.values.size(), signal.size());
    EXPECT_EQ(r.values, signal) << seed;
  }
}

TEST(Stitch, EmptyInput) { EXPECT_TRUE(reconstruct_overlap({}).order.empty()); }

TEST(Adreno, PrefixIsSixteenBytes) { EXPECT_EQ(calibrate_prefix(sim::profile("adreno")), 16u); }

TEST(Adreno, LongRunsOfConvOutput) {
  const auto leak = attack_adreno(sim::profile("adreno"), make_model(1), make_input(1));
  EXPECT_EQ(leak.prefix_bytes, 16u);
  EXPECT_GE(leak.coverage, 0.40);
  EXPECT_GE(leak.longest_run, 256u);
  for (const auto& r : leak.runs) {
    ASSERT_GE(r.length, 16u);
    for (std::uint32_t i = 0; i < r.length; ++i) {
      ASSERT_EQ(std::bit_cast<std::uint32_t>(leak.stream[r.stream_offset + i]),
                std::bit_cast<std::uint32_t>(leak.victim.conv[r.filter * kConvSize + r.position + i]));
    }
  }
}

TEST(Adreno, NeedsQuadModel) {
  EXPECT_THROW(attack_adreno(sim::profile("nvidia"), make_model(1), make_input(1)), std::invalid_argument);
}

}  // namespace
}  // namespace stalereg::cnn
