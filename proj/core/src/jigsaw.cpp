#include "stalereg/jigsaw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "stalereg/rng.hpp"

namespace stalereg::jigsaw {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};
constexpr int opposite(int d) { return (d + 2) % 4; }

using Chromosome = std::vector<std::size_t>;

struct Model {
  const EdgeCosts& costs;
  std::uint32_t w;
  std::uint32_t h;
  std::size_t n;
  /// sorted[(a * 4 + d)] = pieces ordered by cost of sitting in direction d of a.
  std::vector<std::vector<std::size_t>> sorted;

  double cost(std::size_t a, int d, std::size_t b) const {
    switch (d) {
      case 0: return costs.right(a, b);
      case 1: return costs.down(a, b);
      case 2: return costs.right(b, a);
      default: return costs.down(b, a);
    }
  }

  std::size_t best(std::size_t a, int d) const {
    const auto& s = sorted[a * 4 + static_cast<std::size_t>(d)];
    return s.empty() ? kNone : s.front();
  }

  bool best_buddies(std::size_t a, int d, std::size_t b) const {
    return best(a, d) == b && best(b, opposite(d)) == a;
  }
};

/// neighbors[t * 4 + d] of a chromosome.
std::vector<std::size_t> neighbor_table(const Model& m, const Chromosome& c) {
  std::vector<std::size_t> nb(m.n * 4, kNone);
  for (std::uint32_t y = 0; y < m.h; ++y) {
    for (std::uint32_t x = 0; x < m.w; ++x) {
      const auto t = c[std::size_t{y} * m.w + x];
      for (int d = 0; d < 4; ++d) {
        const int nx = static_cast<int>(x) + kDx[d];
        const int ny = static_cast<int>(y) + kDy[d];
        if (nx < 0 || ny < 0 || nx >= static_cast<int>(m.w) || ny >= static_cast<int>(m.h)) continue;
        nb[t * 4 + static_cast<std::size_t>(d)] = c[static_cast<std::size_t>(ny) * m.w + static_cast<std::size_t>(nx)];
      }
    }
  }
  return nb;
}

class Grower {
 public:
  Grower(const Model& m, Rng& rng) : m_(m), rng_(rng) {
    gw_ = 2 * m.w - 1;
    gh_ = 2 * m.h - 1;
    cells_.assign(static_cast<std::size_t>(gw_) * gh_, kNone);
    used_.assign(m.n, false);
  }

  Chromosome cross(const std::vector<std::size_t>& nb1, const std::vector<std::size_t>& nb2) {
    place(static_cast<int>(m_.w) - 1, static_cast<int>(m_.h) - 1,
          static_cast<std::size_t>(rng_.below(m_.n)));
    while (placed_ < m_.n) {
      struct Option {
        int x, y;
        std::size_t tile;
      };
      std::vector<Option> agreed, buddies;
      Option cheapest{0, 0, kNone};
      double cheapest_cost = std::numeric_limits<double>::infinity();

      for (int y = std::max(0, miny_ - 1); y <= std::min(static_cast<int>(gh_) - 1, maxy_ + 1); ++y) {
        for (int x = std::max(0, minx_ - 1); x <= std::min(static_cast<int>(gw_) - 1, maxx_ + 1); ++x) {
          if (!open_slot(x, y)) continue;
          for (int d = 0; d < 4; ++d) {
            // Neighbor a sits opposite to d; the slot lies in direction d of a.
            const int ax = x - kDx[d];
            const int ay = y - kDy[d];
            const auto a = tile_at(ax, ay);
            if (a == kNone) continue;
            const auto i = a * 4 + static_cast<std::size_t>(d);
            const auto t1 = nb1[i];
            const auto t2 = nb2[i];
            if (t1 != kNone && t1 == t2 && !used_[t1]) agreed.push_back({x, y, t1});
            if (!agreed.empty()) continue;
            for (auto t : {t1, t2}) {
              if (t != kNone && !used_[t] && m_.best_buddies(a, d, t)) buddies.push_back({x, y, t});
            }
            if (!buddies.empty()) continue;
            for (auto t : m_.sorted[i]) {
              if (used_[t]) continue;
              const double c = m_.cost(a, d, t);
              if (c < cheapest_cost) {
                cheapest_cost = c;
                cheapest = {x, y, t};
              }
              break;
            }
          }
        }
      }
      const Option pick = !agreed.empty()    ? agreed[rng_.below(agreed.size())]
                          : !buddies.empty() ? buddies[rng_.below(buddies.size())]
                                             : cheapest;
      place(pick.x, pick.y, pick.tile);
    }

    Chromosome out(m_.n);
    for (int y = miny_; y <= maxy_; ++y) {
      for (int x = minx_; x <= maxx_; ++x) {
        out[static_cast<std::size_t>(y - miny_) * m_.w + static_cast<std::size_t>(x - minx_)] = tile_at(x, y);
      }
    }
    return out;
  }

 private:
  std::size_t tile_at(int x, int y) const {
    if (x < 0 || y < 0 || x >= static_cast<int>(gw_) || y >= static_cast<int>(gh_)) return kNone;
    return cells_[static_cast<std::size_t>(y) * gw_ + static_cast<std::size_t>(x)];
  }

  bool open_slot(int x, int y) const {
    if (tile_at(x, y) != kNone) return false;
    if (std::max(maxx_, x) - std::min(minx_, x) + 1 > static_cast<int>(m_.w)) return false;
    if (std::max(maxy_, y) - std::min(miny_, y) + 1 > static_cast<int>(m_.h)) return false;
    for (int d = 0; d < 4; ++d) {
      if (tile_at(x + kDx[d], y + kDy[d]) != kNone) return true;
    }
    return false;
  }

  void place(int x, int y, std::size_t t) {
    cells_[static_cast<std::size_t>(y) * gw_ + static_cast<std::size_t>(x)] = t;
    used_[t] = true;
    if (placed_++ == 0) {
      minx_ = maxx_ = x;
      miny_ = maxy_ = y;
    } else {
      minx_ = std::min(minx_, x);
      maxx_ = std::max(maxx_, x);
      miny_ = std::min(miny_, y);
      maxy_ = std::max(maxy_, y);
    }
  }

  const Model& m_;
  Rng& rng_;
  std::uint32_t gw_ = 0, gh_ = 0;
  std::vector<std::size_t> cells_;
  std::vector<bool> used_;
  std::size_t placed_ = 0;
  int minx_ = 0, maxx_ = 0, miny_ = 0, maxy_ = 0;
};

}  // namespace

EdgeCosts::EdgeCosts(const std::vector<Piece>& pieces) : n_(pieces.size()) {
  lr_.assign(n_ * n_, 0.0);
  ud_.assign(n_ * n_, 0.0);
  for (std::size_t a = 0; a < n_; ++a) {
    for (std::size_t b = 0; b < n_; ++b) {
      const auto s = pieces[a].size;
      if (pieces[b].size != s) throw std::invalid_argument("pieces differ in size");
      double lr = 0.0, ud = 0.0;
      for (std::uint32_t k = 0; k < s; ++k) {
        const double dl = static_cast<double>(pieces[a].at(s - 1, k)) - pieces[b].at(0, k);
        const double du = static_cast<double>(pieces[a].at(k, s - 1)) - pieces[b].at(k, 0);
        lr += dl * dl;
        ud += du * du;
      }
      lr_[a * n_ + b] = lr;
      ud_[a * n_ + b] = ud;
    }
  }
}

double EdgeCosts::fitness(const std::vector<std::size_t>& c, std::uint32_t w,
                          std::uint32_t h) const {
  double f = 0.0;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const auto t = c[std::size_t{y} * w + x];
      if (x + 1 < w) f += right(t, c[std::size_t{y} * w + x + 1]);
      if (y + 1 < h) f += down(t, c[std::size_t{y + 1} * w + x]);
    }
  }
  return f;
}

Solution solve(const std::vector<Piece>& pieces, std::uint32_t grid_w, std::uint32_t grid_h,
               const GaParams& params) {
  const std::size_t n = pieces.size();
  if (n == 0 || n != std::size_t{grid_w} * grid_h) {
    throw std::invalid_argument("piece count must equal grid_w * grid_h");
  }
  if (params.population < 2) throw std::invalid_argument("population must be >= 2");
  EdgeCosts costs(pieces);
  Solution sol;
  if (n == 1) {
    sol.arrangement = {0};
    sol.best_fitness_per_generation.assign(params.generations, 0.0);
    return sol;
  }

  Model m{costs, grid_w, grid_h, n, std::vector<std::vector<std::size_t>>(n * 4)};
  for (std::size_t a = 0; a < n; ++a) {
    for (int d = 0; d < 4; ++d) {
      auto& s = m.sorted[a * 4 + static_cast<std::size_t>(d)];
      for (std::size_t b = 0; b < n; ++b) {
        if (b != a) s.push_back(b);
      }
      std::stable_sort(s.begin(), s.end(),
                       [&](std::size_t x, std::size_t y) { return m.cost(a, d, x) < m.cost(a, d, y); });
    }
  }

  Rng rng(params.seed);
  struct Member {
    Chromosome genes;
    double fitness;
  };
  std::vector<Member> pop;
  pop.reserve(params.population);
  for (std::uint32_t i = 0; i < params.population; ++i) {
    Chromosome c(n);
    std::iota(c.begin(), c.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(c));
    const double f = costs.fitness(c, grid_w, grid_h);
    pop.push_back({std::move(c), f});
  }
  auto by_fitness = [](const Member& a, const Member& b) { return a.fitness < b.fitness; };

  const auto elites = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(params.elite_fraction * params.population)));
  auto tournament = [&]() -> const Member& {
    const Member* best = &pop[rng.below(pop.size())];
    for (std::uint32_t k = 1; k < params.tournament; ++k) {
      const Member* c = &pop[rng.below(pop.size())];
      if (c->fitness < best->fitness) best = c;
    }
    return *best;
  };

  for (std::uint32_t g = 0; g < params.generations; ++g) {
    std::stable_sort(pop.begin(), pop.end(), by_fitness);
    std::vector<Member> next(pop.begin(), pop.begin() + static_cast<std::ptrdiff_t>(elites));
    while (next.size() < params.population) {
      const auto& p1 = tournament();
      const auto& p2 = tournament();
      Grower grower(m, rng);
      auto child = grower.cross(neighbor_table(m, p1.genes), neighbor_table(m, p2.genes));
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform01() < params.mutation_rate) std::swap(child[i], child[rng.below(n)]);
      }
      const double f = costs.fitness(child, grid_w, grid_h);
      next.push_back({std::move(child), f});
    }
    pop = std::move(next);
    sol.best_fitness_per_generation.push_back(
        std::min_element(pop.begin(), pop.end(), by_fitness)->fitness);
  }

  const auto best = std::min_element(pop.begin(), pop.end(), by_fitness);
  sol.arrangement = best->genes;
  sol.fitness = best->fitness;
  return sol;
}

double neighbor_accuracy(const std::vector<std::size_t>& arrangement,
                         const std::vector<std::size_t>& truth, std::uint32_t w, std::uint32_t h) {
  const std::size_t n = std::size_t{w} * h;
  if (arrangement.size() != n || truth.size() != n) {
    throw std::invalid_argument("arrangement size must equal grid_w * grid_h");
  }
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[arrangement[i]] = i;
  std::size_t total = 0, good = 0;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const auto a = truth[std::size_t{y} * w + x];
      const auto pa = pos[a];
      if (x + 1 < w) {
        ++total;
        const auto b = truth[std::size_t{y} * w + x + 1];
        if (pa % w + 1 < w && pos[b] == pa + 1) ++good;
      }
      if (y + 1 < h) {
        ++total;
        const auto b = truth[std::size_t{y + 1} * w + x];
        if (pos[b] == pa + w) ++good;
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace stalereg::jigsaw
