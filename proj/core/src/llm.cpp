#include "stalereg/llm.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "stalereg/rng.hpp"

namespace stalereg::llm {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated embedding tables");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
         std::uint32_t{b[3]} << 24;
}

void put_floats(std::ostream& out, std::span<const float> v) {
  for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<float> v(n);
  for (auto& f : v) f = std::bit_cast<float>(get_u32(in));
  return v;
}

std::uint32_t key_of(float v) { return std::bit_cast<std::uint32_t>(v); }

}  // namespace

EmbeddingTables make_tables(std::uint32_t vocab, std::uint32_t dim, std::uint32_t positions,
                            std::uint64_t seed) {
  EmbeddingTables t{vocab, dim, positions, {}, {}};
  Rng rng(seed);
  t.token.resize(std::size_t{vocab} * dim);
  for (auto& v : t.token) v = static_cast<float>(rng.normal() * 0.1);
  t.position.resize(std::size_t{positions} * dim);
  for (auto& v : t.position) v = static_cast<float>(rng.normal() * 0.02);
  return t;
}

void write_tables(std::ostream& out, const EmbeddingTables& t) {
  put_u32(out, t.vocab);
  put_u32(out, t.dim);
  put_u32(out, t.positions);
  put_floats(out, t.token);
  put_floats(out, t.position);
}

EmbeddingTables read_tables(std::istream& in) {
  EmbeddingTables t;
  t.vocab = get_u32(in);
  t.dim = get_u32(in);
  t.positions = get_u32(in);
  if (t.vocab == 0 || t.dim == 0 || t.positions == 0) throw std::runtime_error("empty embedding tables");
  t.token = get_floats(in, std::size_t{t.vocab} * t.dim);
  t.position = get_floats(in, std::size_t{t.positions} * t.dim);
  return t;
}

void write_tables(const std::filesystem::path& path, const EmbeddingTables& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_tables(out, t);
}

EmbeddingTables read_tables(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tables(in);
}

void write_floats(const std::filesystem::path& path, std::span<const float> v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_floats(out, v);
}

std::vector<float> read_floats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto bytes = std::filesystem::file_size(path);
  if (bytes % 4 != 0) throw std::runtime_error("leak file size is not a multiple of 4");
  return get_floats(in, bytes / 4);
}

sim::Dispatch embed_dispatch(sim::Simulator& sim, const EmbeddingTables& t,
                             std::span<const std::uint32_t> tokens, sim::BufferId& output) {
  if (tokens.empty()) throw std::invalid_argument("no tokens to embed");
  if (tokens.size() > t.positions) throw std::invalid_argument("more tokens than positions");
  for (auto id : tokens) {
    if (id >= t.vocab) throw std::invalid_argument("token id " + std::to_string(id) + " out of range");
  }
  if (t.dim > 1024) throw std::invalid_argument("embedding dimension exceeds the group size limit");
  const auto ids = sim.upload(tokens);
  const auto emb = sim.upload_floats(t.token);
  const auto pos = sim.upload_floats(t.position);
  output = sim.create_buffer(tokens.size() * t.dim);

  const auto model = sim.config().register_model;
  auto r = [model](std::uint32_t i) {
    return model == isa::RegisterModel::Quad ? isa::RegisterRef::quad(i, isa::Component::X)
                                             : isa::RegisterRef::general(i);
  };
  const auto re = r(0), rp = r(1), rs = r(2);
  const std::uint32_t dim = t.dim;
  sim::NativeKernel k{"embed", model == isa::RegisterModel::Quad ? 12u : 3u,
                      [=](sim::WaveContext& ctx) {
                        const auto p = ctx.group();
                        const auto tok = ctx.load(0, p);
                        std::vector<std::size_t> addrs(ctx.active_lanes());
                        for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
                          const auto i = ctx.local_id(l);
                          ctx.write_float(re, l, ctx.load_float(1, std::size_t{tok} * dim + i));
                          ctx.write_float(rp, l, ctx.load_float(2, std::size_t{p} * dim + i));
                          ctx.write_float(rs, l, ctx.read_float(re, l) + ctx.read_float(rp, l));
                          addrs[l] = std::size_t{p} * dim + i;
                        }
                        ctx.store(3, addrs, rs);
                      }};
  return sim::Dispatch::of(std::move(k), static_cast<std::uint32_t>(tokens.size()), dim,
                           {{0, ids}, {1, emb}, {2, pos}, {3, output}});
}

std::vector<float> embed(sim::Simulator& sim, const EmbeddingTables& t,
                         std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) return {};
  sim::BufferId out = 0;
  sim.dispatch(embed_dispatch(sim, t, tokens, out));
  return sim.read_floats(out);
}

std::vector<float> leak_embeddings(const sim::GpuConfig& cfg, const EmbeddingTables& t,
                                   std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) return {};
  sim::Simulator sim(cfg);
  sim.set_record_leaks(false);
  sim::BufferId victim_out = 0;
  const auto victim = embed_dispatch(sim, t, tokens, victim_out);
  const auto window = std::get<sim::NativeKernel>(*victim.kernel).declared_registers;
  const std::size_t n = tokens.size() * t.dim;

  isa::Program p;
  p.name = "dump_window";
  p.model = cfg.register_model;
  p.declared_registers = window;
  std::map<std::uint32_t, sim::BufferId> bind;
  for (std::uint32_t c = 0; c < window; ++c) {
    bind[c] = sim.create_buffer(n);
    p.instructions.push_back(
        {isa::Opcode::StoreGlobal, std::nullopt, {isa::RegisterRef::from_cell(c, p.model)},
         isa::MemoryRef{c, isa::RegisterRef::special(isa::SpecialRegister::ThreadId)}});
  }
  p.instructions.push_back({isa::Opcode::Exit, std::nullopt, {}, std::nullopt});
  const std::array<sim::Dispatch, 2> pair{
      victim, sim::Dispatch::of(std::move(p), victim.group_count, victim.group_size, bind)};
  sim.dispatch_concurrent(pair);

  std::vector<float> dump;
  for (const auto& [c, id] : bind) {
    const auto v = sim.read_floats(id);
    dump.insert(dump.end(), v.begin(), v.end());
  }
  return dump;
}

EmbeddingLut::EmbeddingLut(const EmbeddingTables& t, std::uint32_t max_pos) : max_pos_(max_pos) {
  if (max_pos > t.positions) throw std::invalid_argument("max_pos exceeds the position table");
  entries_.reserve(std::size_t{t.vocab} * t.dim * max_pos);
  for (std::uint32_t p = 0; p < max_pos; ++p) {
    for (std::uint32_t tok = 0; tok < t.vocab; ++tok) {
      for (std::uint32_t i = 0; i < t.dim; ++i) {
        entries_.push_back(LutEntry{key_of(t.sum(tok, p, i)), tok, p, i});
      }
    }
  }
  std::sort(entries_.begin(), entries_.end(), [](const LutEntry& a, const LutEntry& b) {
    return std::tie(a.key, a.token, a.position, a.index) <
           std::tie(b.key, b.token, b.position, b.index);
  });
}

std::span<const LutEntry> EmbeddingLut::find(float v) const {
  const auto k = key_of(v);
  const auto lo = std::lower_bound(entries_.begin(), entries_.end(), k,
                                   [](const LutEntry& e, std::uint32_t key) { return e.key < key; });
  auto hi = lo;
  while (hi != entries_.end() && hi->key == k) ++hi;
  return {lo, hi};
}

EmbeddingLut build_lut(const EmbeddingTables& t, std::uint32_t max_pos) { return {t, max_pos}; }

std::vector<ReconstructedToken> reconstruct(std::span<const float> leaked, const EmbeddingLut& lut,
                                            const ReconstructOptions& options) {
  if (options.chunk == 0 || options.stride == 0) throw std::invalid_argument("chunk and stride must be >= 1");
  std::vector<ReconstructedToken> out;
  for (std::size_t off = 0; off + options.chunk <= leaked.size(); off += options.stride) {
    // (token, position) -> per-value candidate indices, in chunk order.
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::vector<std::uint32_t>>> hits;
    for (std::size_t k = 0; k < options.chunk; ++k) {
      for (const auto& e : lut.find(leaked[off + k])) {
        auto& per_value = hits[{e.token, e.position}];
        if (per_value.size() < k + 1) per_value.resize(k + 1);
        per_value[k].push_back(e.index);
      }
    }
    for (auto& [tp, per_value] : hits) {
      // Longest strictly ascending chain using at most one index per value.
      std::vector<std::uint32_t> tails;
      for (auto& idx : per_value) {
        std::sort(idx.rbegin(), idx.rend());
        for (auto i : idx) {
          auto it = std::lower_bound(tails.begin(), tails.end(), i);
          if (it == tails.end()) tails.push_back(i);
          else *it = i;
        }
      }
      if (tails.size() >= options.min_hits) {
        out.push_back(ReconstructedToken{off, tp.first, tp.second});
        break;
      }
    }
  }
  return out;
}

void write_tokens_csv(std::ostream& out, std::span<const ReconstructedToken> tokens) {
  out << "chunk_offset,token,position\n";
  for (const auto& t : tokens) out << t.chunk_offset << ',' << t.token << ',' << t.position << '\n';
}

}  // namespace stalereg::llm
