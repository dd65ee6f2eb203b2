#include "stalereg/pixel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "stalereg/rng.hpp"

namespace stalereg::pixel {

namespace {

isa::RegisterRef cell(std::uint32_t c, isa::RegisterModel model) {
  return isa::RegisterRef::from_cell(c, model);
}

isa::MemoryRef at_tid(std::uint32_t buffer) {
  return isa::MemoryRef{buffer, isa::RegisterRef::special(isa::SpecialRegister::ThreadId)};
}

std::vector<float> tile_major(const GrayImage& img, std::uint32_t tile) {
  const auto gw = img.width / tile;
  const auto gh = img.height / tile;
  std::vector<float> out(img.pixels.size());
  std::size_t i = 0;
  for (std::uint32_t ty = 0; ty < gh; ++ty) {
    for (std::uint32_t tx = 0; tx < gw; ++tx) {
      for (std::uint32_t y = 0; y < tile; ++y) {
        for (std::uint32_t x = 0; x < tile; ++x) out[i++] = img.at(tx * tile + x, ty * tile + y);
      }
    }
  }
  return out;
}

void check_tile(std::uint32_t tile) {
  if (tile == 0 || tile * tile > 1024) throw std::invalid_argument("tile side must be in [1, 32]");
}

}  // namespace

isa::Program fragment_shader(isa::RegisterModel model) {
  using isa::Opcode;
  const isa::Immediate neg_zero{0x80000000u};
  isa::Program p;
  p.name = "fragment";
  p.model = model;
  p.declared_registers = 4;
  for (std::uint32_t c = 0; c < 3; ++c) {
    p.instructions.push_back({Opcode::LoadGlobal, cell(c, model), {}, at_tid(c)});
  }
  for (std::uint32_t c = 0; c < 3; ++c) {
    p.instructions.push_back({Opcode::FAdd, cell(c, model), {cell(c, model), neg_zero}, std::nullopt});
  }
  p.instructions.push_back(
      {Opcode::MovImm, cell(3, model), {isa::Immediate{0x3f800000u}}, std::nullopt});
  p.instructions.push_back({Opcode::StoreTile,
                            std::nullopt,
                            {cell(0, model), cell(1, model), cell(2, model), cell(3, model)},
                            at_tid(3)});
  p.instructions.push_back({Opcode::Exit, std::nullopt, {}, std::nullopt});
  return p;
}

isa::Program fragment_attacker(isa::RegisterModel model) {
  isa::Program p;
  p.name = "fragment_leak";
  p.model = model;
  p.declared_registers = 4;
  for (std::uint32_t c = 0; c < 4; ++c) {
    p.instructions.push_back({isa::Opcode::StoreGlobal, std::nullopt, {cell(c, model)}, at_tid(c)});
  }
  p.instructions.push_back({isa::Opcode::Exit, std::nullopt, {}, std::nullopt});
  return p;
}

std::vector<Tile> split_tiles(const GrayImage& img, std::uint32_t tile) {
  if (tile == 0 || img.width % tile != 0 || img.height % tile != 0) {
    throw std::invalid_argument("image sides must be multiples of the tile size");
  }
  std::vector<Tile> tiles;
  for (std::uint32_t ty = 0; ty < img.height / tile; ++ty) {
    for (std::uint32_t tx = 0; tx < img.width / tile; ++tx) {
      Tile t;
      t.size = tile;
      t.hole.assign(std::size_t{tile} * tile, false);
      for (std::uint32_t y = 0; y < tile; ++y) {
        for (std::uint32_t x = 0; x < tile; ++x) t.values.push_back(img.at(tx * tile + x, ty * tile + y));
      }
      t.group = static_cast<std::uint32_t>(tiles.size());
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

GrayImage assemble(std::span<const Tile> tiles, std::span<const std::size_t> arrangement,
                   std::uint32_t grid_w, std::uint32_t grid_h) {
  if (tiles.empty() || arrangement.size() != std::size_t{grid_w} * grid_h) {
    throw std::invalid_argument("arrangement does not match the grid");
  }
  const auto s = tiles.front().size;
  GrayImage img(grid_w * s, grid_h * s);
  for (std::uint32_t gy = 0; gy < grid_h; ++gy) {
    for (std::uint32_t gx = 0; gx < grid_w; ++gx) {
      const auto& t = tiles[arrangement[std::size_t{gy} * grid_w + gx]];
      for (std::uint32_t y = 0; y < s; ++y) {
        for (std::uint32_t x = 0; x < s; ++x) img.at(gx * s + x, gy * s + y) = t.at(x, y);
      }
    }
  }
  return img;
}

jigsaw::Piece to_piece(const Tile& t) { return jigsaw::Piece{t.size, t.values}; }

sim::Dispatch render_victim(sim::Simulator& sim, const GrayImage& r, const GrayImage& g,
                            const GrayImage& b, std::uint32_t tile) {
  check_tile(tile);
  if (r.width != g.width || r.width != b.width || r.height != g.height || r.height != b.height) {
    throw std::invalid_argument("channel images differ in size");
  }
  if (r.width % tile != 0 || r.height % tile != 0) {
    throw std::invalid_argument("image sides must be multiples of the tile size");
  }
  const auto groups = (r.width / tile) * (r.height / tile);
  const auto cr = tile_major(r, tile);
  const auto cg = tile_major(g, tile);
  const auto cb = tile_major(b, tile);
  std::map<std::uint32_t, sim::BufferId> bind{{0, sim.upload_floats(cr)},
                                              {1, sim.upload_floats(cg)},
                                              {2, sim.upload_floats(cb)},
                                              {3, sim.create_buffer(cr.size() * 4)}};
  return sim::Dispatch::of(fragment_shader(sim.config().register_model), groups, tile * tile,
                           std::move(bind));
}

sim::Dispatch render_victim(sim::Simulator& sim, const GrayImage& img, std::uint32_t tile) {
  check_tile(tile);
  const auto padded = pad_to_multiple(img, tile);
  return render_victim(sim, padded, padded, padded, tile);
}

sim::Dispatch noise_victim(sim::Simulator& sim, std::uint32_t groups, std::uint32_t group_size,
                           std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = std::size_t{groups} * group_size;
  std::map<std::uint32_t, sim::BufferId> bind;
  for (std::uint32_t c = 0; c < 3; ++c) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.open_unit_float();
    bind[c] = sim.upload_floats(v);
  }
  bind[3] = sim.create_buffer(n * 4);
  return sim::Dispatch::of(fragment_shader(sim.config().register_model), groups, group_size,
                           std::move(bind));
}

std::vector<LeakQuad> leak(sim::Simulator& sim, const sim::Dispatch& victim) {
  const std::size_t n = std::size_t{victim.group_count} * victim.group_size;
  std::map<std::uint32_t, sim::BufferId> bind;
  for (std::uint32_t c = 0; c < 4; ++c) bind[c] = sim.create_buffer(n);
  const auto attacker = sim::Dispatch::of(fragment_attacker(sim.config().register_model),
                                          victim.group_count, victim.group_size, bind);
  const std::array<sim::Dispatch, 2> pair{victim, attacker};
  sim.dispatch_concurrent(pair);

  const auto W = sim.config().wave_width;
  std::array<std::vector<float>, 4> out;
  for (std::uint32_t c = 0; c < 4; ++c) out[c] = sim.read_floats(bind[c]);
  std::vector<LeakQuad> quads(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto local = static_cast<std::uint32_t>(t % victim.group_size);
    quads[t].group = static_cast<std::uint32_t>(t / victim.group_size);
    quads[t].wave = local / W;
    quads[t].lane = local % W;
    for (std::uint32_t c = 0; c < 4; ++c) quads[t].values[c] = out[c][t];
  }
  return quads;
}

std::vector<FragmentRecord> identify_fragments(std::span<const LeakQuad> quads,
                                               const IdentifyOptions& options) {
  const auto marker = std::bit_cast<std::uint32_t>(options.marker);
  // Number of quads each bit pattern occurs in.
  std::unordered_map<std::uint32_t, std::size_t> presence;
  for (const auto& q : quads) {
    std::set<std::uint32_t> seen;
    for (float v : q.values) seen.insert(std::bit_cast<std::uint32_t>(v));
    for (auto k : seen) ++presence[k];
  }
  const auto it = presence.find(marker);
  const std::size_t marked = it == presence.end() ? 0 : it->second;
  std::size_t rival = 0;
  for (const auto& [k, c] : presence) {
    if (k != marker) rival = std::max(rival, c);
  }
  std::vector<FragmentRecord> out;
  if (marked < 2 || static_cast<double>(marked) < options.min_ratio * static_cast<double>(rival)) {
    return out;
  }
  for (const auto& q : quads) {
    if (std::none_of(q.values.begin(), q.values.end(),
                     [&](float v) { return std::bit_cast<std::uint32_t>(v) == marker; })) {
      continue;
    }
    out.push_back(FragmentRecord{q.values, q.group, q.wave, q.lane});
  }
  return out;
}

bool PixelMapping::bijective() const {
  std::set<std::array<std::uint32_t, 2>> seen;
  for (const auto& c : coords) {
    if (!c) continue;
    if ((*c)[0] >= tile || (*c)[1] >= tile || !seen.insert(*c).second) return false;
  }
  return seen.size() == std::size_t{tile} * tile;
}

PixelMapping calibrate_mapping(const sim::GpuConfig& cfg, std::uint32_t tile) {
  check_tile(tile);
  sim::Simulator sim(cfg);
  // Codes stay below the alpha marker.
  const float scale = 2.0f * static_cast<float>(tile * tile);
  GrayImage code(tile, tile);
  for (std::uint32_t k = 0; k < tile * tile; ++k) {
    code.pixels[k] = static_cast<float>(k + 1) / scale;
  }
  const auto victim = render_victim(sim, code, code, code, tile);
  const auto quads = leak(sim, victim);

  PixelMapping m;
  m.tile = tile;
  m.wave_width = cfg.wave_width;
  const auto waves = (tile * tile + cfg.wave_width - 1) / cfg.wave_width;
  m.coords.assign(std::size_t{waves} * cfg.wave_width, std::nullopt);
  for (const auto& q : quads) {
    for (float v : q.values) {
      if (v == kAlphaMarker || !(v > 0.0f)) continue;
      const auto k = std::lround(v * scale) - 1;
      if (k < 0 || k >= static_cast<long>(tile * tile)) continue;
      const auto idx = std::size_t{q.wave} * cfg.wave_width + q.lane;
      if (idx < m.coords.size()) {
        m.coords[idx] = std::array<std::uint32_t, 2>{static_cast<std::uint32_t>(k) % tile,
                                                     static_cast<std::uint32_t>(k) / tile};
      }
      break;
    }
  }
  return m;
}

std::vector<Tile> to_grayscale(std::span<const FragmentRecord> fragments,
                               const PixelMapping& mapping, float tolerance) {
  const auto T = mapping.tile;
  std::map<std::uint32_t, Tile> tiles;
  for (const auto& f : fragments) {
    auto [it, fresh] = tiles.try_emplace(f.group);
    Tile& t = it->second;
    if (fresh) {
      t.size = T;
      t.group = f.group;
      t.values.assign(std::size_t{T} * T, 0.0f);
      t.hole.assign(std::size_t{T} * T, true);
    }
    const auto idx = std::size_t{f.wave} * mapping.wave_width + f.lane;
    if (idx >= mapping.coords.size() || !mapping.coords[idx]) continue;
    const auto [x, y] = *mapping.coords[idx];

    std::vector<float> channels(f.rgba.begin(), f.rgba.end());
    const auto alpha = std::find(channels.begin(), channels.end(), kAlphaMarker);
    if (alpha == channels.end()) continue;
    channels.erase(alpha);
    std::sort(channels.begin(), channels.end());
    float sum = 0.0f;
    int count = 0;
    float last = 0.0f;
    for (float v : channels) {
      if (count == 0 || v - last > tolerance) {
        sum += v;
        ++count;
        last = v;
      }
    }
    t.values[std::size_t{y} * T + x] = sum / static_cast<float>(count);
    t.hole[std::size_t{y} * T + x] = false;
  }
  std::vector<Tile> out;
  for (auto& [g, t] : tiles) {
    t.has_holes = std::find(t.hole.begin(), t.hole.end(), true) != t.hole.end();
    out.push_back(std::move(t));
  }
  return out;
}

AttackResult attack(const sim::GpuConfig& cfg, const GrayImage& img, std::uint32_t tile,
                    const jigsaw::GaParams& ga) {
  check_tile(tile);
  const auto padded = pad_to_multiple(img, tile);
  AttackResult res;
  res.grid_w = padded.width / tile;
  res.grid_h = padded.height / tile;
  const std::size_t cells = std::size_t{res.grid_w} * res.grid_h;

  sim::Simulator sim(cfg);
  sim.set_record_leaks(false);
  const auto victim = render_victim(sim, padded, tile);
  const auto quads = leak(sim, victim);
  const auto fragments = identify_fragments(quads);
  res.quads = quads.size();
  res.fragments = fragments.size();
  res.tiles = to_grayscale(fragments, calibrate_mapping(cfg, tile));

  if (res.tiles.size() > cells) res.tiles.resize(cells);
  while (res.tiles.size() < cells) {
    Tile blank;
    blank.size = tile;
    blank.values.assign(std::size_t{tile} * tile, 0.0f);
    blank.hole.assign(std::size_t{tile} * tile, true);
    blank.has_holes = true;
    blank.group = static_cast<std::uint32_t>(-1);
    res.tiles.push_back(std::move(blank));
  }
  std::vector<jigsaw::Piece> pieces;
  for (const auto& t : res.tiles) pieces.push_back(to_piece(t));
  res.solution = jigsaw::solve(pieces, res.grid_w, res.grid_h, ga);
  res.reconstruction = assemble(res.tiles, res.solution.arrangement, res.grid_w, res.grid_h);
  return res;
}

}  // namespace stalereg::pixel
