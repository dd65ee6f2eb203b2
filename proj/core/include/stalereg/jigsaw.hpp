#pragma once

// Genetic jigsaw solver for square-tile puzzles with unknown positions.
//
// Chromosomes are full placements. Crossover grows a child from a single
// tile inside a grid_w x grid_h frame, preferring edges both parents agree
// on, then best-buddy edges a parent offers, then the most compatible free
// tile.

#include <cstdint>
#include <vector>

namespace stalereg::jigsaw {

/// Square tile, row-major intensities.
struct Piece {
  std::uint32_t size = 0;
  std::vector<float> values;
  float at(std::uint32_t x, std::uint32_t y) const { return values[std::size_t{y} * size + x]; }
};

struct GaParams {
  std::uint32_t population = 300;
  std::uint32_t generations = 100;
  double elite_fraction = 0.05;
  /// Per-cell probability of swapping with a random cell.
  double mutation_rate = 0.02;
  std::uint32_t tournament = 3;
  std::uint64_t seed = 1;
};

struct Solution {
  /// arrangement[y * grid_w + x] = piece index.
  std::vector<std::size_t> arrangement;
  double fitness = 0.0;
  std::vector<double> best_fitness_per_generation;
};

/// Sum of squared differences along every adjacent edge; lower is better.
class EdgeCosts {
 public:
  explicit EdgeCosts(const std::vector<Piece>& pieces);
  std::size_t count() const { return n_; }
  /// b placed right of a.
  double right(std::size_t a, std::size_t b) const { return lr_[a * n_ + b]; }
  /// b placed below a.
  double down(std::size_t a, std::size_t b) const { return ud_[a * n_ + b]; }
  double fitness(const std::vector<std::size_t>& arrangement, std::uint32_t grid_w,
                 std::uint32_t grid_h) const;

 private:
  std::size_t n_;
  std::vector<double> lr_;
  std::vector<double> ud_;
};

/// Requires pieces.size() == grid_w * grid_h and equal piece sizes.
Solution solve(const std::vector<Piece>& pieces, std::uint32_t grid_w, std::uint32_t grid_h,
               const GaParams& params = {});

/// Fraction of true right/down neighbor pairs that are neighbors in the same
/// relation in `arrangement`. `truth` uses the same layout convention.
double neighbor_accuracy(const std::vector<std::size_t>& arrangement,
                         const std::vector<std::size_t>& truth, std::uint32_t grid_w,
                         std::uint32_t grid_h);

}  // namespace stalereg::jigsaw
