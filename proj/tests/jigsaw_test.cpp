#include "stalereg/jigsaw.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "stalereg/image.hpp"
#include "stalereg/rng.hpp"

namespace stalereg::jigsaw {
namespace {

std::vector<Piece> cut(const GrayImage& img, std::uint32_t tile) {
  std::vector<Piece> out;
  for (std::uint32_t ty = 0; ty < img.height / tile; ++ty) {
    for (std::uint32_t tx = 0; tx < img.width / tile; ++tx) {
      Piece p{tile, {}};
      for (std::uint32_t y = 0; y < tile; ++y) {
        for (std::uint32_t x = 0; x < tile; ++x) p.values.push_back(img.at(tx * tile + x, ty * tile + y));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct Shuffled {
  std::vector<Piece> pieces;
  std::vector<std::size_t> truth;  ///< truth[cell] = piece index
};

Shuffled shuffle(std::vector<Piece> pieces, std::uint64_t seed) {
  std::vector<std::size_t> order(pieces.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  Shuffled s;
  s.truth.resize(pieces.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    s.pieces.push_back(pieces[order[k]]);
    s.truth[order[k]] = k;
  }
  return s;
}

GrayImage fixture() { return read_pgm(std::filesystem::path(STALEREG_DATA_DIR) / "test128.pgm"); }

TEST(EdgeCosts, SumOfSquaredBorderDifferences) {
  Piece a{2, {0.0f, 1.0f, 0.0f, 0.5f}}, b{2, {1.0f, 0.0f, 0.0f, 0.0f}};
  const EdgeCosts c({a, b});
  // a's right column {1, 0.5} against b's left column {1, 0}.
  EXPECT_DOUBLE_EQ(c.right(0, 1), 0.25);
  // a's bottom row {0, 0.5} against b's top row {1, 0}.
  EXPECT_DOUBLE_EQ(c.down(0, 1), 1.25);
  EXPECT_DOUBLE_EQ(c.fitness({0, 1}, 2, 1), 0.25);
}

TEST(NeighborAccuracy, IdentityAndSwap) {
  const std::vector<std::size_t> truth{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(neighbor_accuracy(truth, truth, 2, 2), 1.0);
  EXPECT_DOUBLE_EQ(neighbor_accuracy({1, 0, 3, 2}, truth, 2, 2), 0.5);
  EXPECT_THROW(neighbor_accuracy({0, 1}, truth, 2, 2), std::invalid_argument);
}

TEST(Solve, TwoByTwoMatchesBruteForce) {
  const auto img = fixture();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    // A 64x64 window cut into four 32-pixel tiles.
    GrayImage sub(64, 64);
    const std::uint32_t ox = static_cast<std::uint32_t>(seed * 7 % 64), oy = static_cast<std::uint32_t>(seed * 13 % 64);
    for (std::uint32_t y = 0; y < 64; ++y) {
      for (std::uint32_t x = 0; x < 64; ++x) sub.at(x, y) = img.at(ox + x, oy + y);
    }
    const auto s = shuffle(cut(sub, 32), seed);
    const EdgeCosts costs(s.pieces);
    std::vector<std::size_t> perm{0, 1, 2, 3}, best;
    double best_cost = 0.0;
    do {
      const double f = costs.fitness(perm, 2, 2);
      if (best.empty() || f < best_cost) {
        best_cost = f;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    GaParams ga;
    ga.population = 50;
    ga.generations = 20;
    ga.seed = seed;
    const auto sol = solve(s.pieces, 2, 2, ga);
    EXPECT_EQ(sol.arrangement, best) << seed;
    EXPECT_DOUBLE_EQ(sol.fitness, best_cost) << seed;
  }
}

TEST(Solve, ElitismKeepsBestFitnessMonotone) {
  const auto s = shuffle(cut(fixture(), 16), 3);
  GaParams ga;
  ga.population = 60;
  ga.generations = 30;
  const auto sol = solve(s.pieces, 8, 8, ga);
  ASSERT_EQ(sol.best_fitness_per_generation.size(), 30u);
  for (std::size_t g = 1; g < 30; ++g) {
    EXPECT_LE(sol.best_fitness_per_generation[g], sol.best_fitness_per_generation[g - 1]);
  }
  auto sorted = sol.arrangement;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Solve, EightByEightPlasma) {
  const auto s = shuffle(cut(fixture(), 16), 4);
  const auto sol = solve(s.pieces, 8, 8);
  EXPECT_GE(neighbor_accuracy(sol.arrangement, s.truth, 8, 8), 0.95);
}

TEST(Solve, Deterministic) {
  const auto s = shuffle(cut(fixture(), 32), 5);
  GaParams ga;
  ga.population = 40;
  ga.generations = 10;
  EXPECT_EQ(solve(s.pieces, 4, 4, ga).arrangement, solve(s.pieces, 4, 4, ga).arrangement);
}

TEST(Solve, Rejections) {
  const auto pieces = cut(fixture(), 64);
  EXPECT_THROW(solve(pieces, 3, 1), std::invalid_argument);
  auto mixed = pieces;
  mixed[1] = Piece{2, {0, 0, 0, 0}};
  EXPECT_THROW(solve(mixed, 2, 2), std::invalid_argument);
  EXPECT_EQ(solve({pieces[0]}, 1, 1).arrangement, std::vector<std::size_t>{0});
}

}  // namespace
}  // namespace stalereg::jigsaw
