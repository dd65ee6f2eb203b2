#include "stalereg/covert.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

#include "stalereg/rng.hpp"

namespace stalereg::covert {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t data_capacity(const FrameLayout& layout, bool epoch) {
  return layout.capacity() - (epoch ? 1 : 0);
}

isa::Instruction make(isa::Opcode op, std::optional<isa::RegisterRef> dst,
                      std::vector<isa::Operand> srcs = {},
                      std::optional<isa::MemoryRef> mem = std::nullopt) {
  return isa::Instruction{op, dst, std::move(srcs), std::move(mem)};
}

isa::MemoryRef at_tid(std::uint32_t buffer) {
  return isa::MemoryRef{buffer, isa::RegisterRef::special(isa::SpecialRegister::ThreadId)};
}

}  // namespace

FrameLayout layout_for(const sim::GpuConfig& cfg) {
  if (cfg.lifecycle == sim::Lifecycle::StoreResidue) return FrameLayout{cfg.half_wave()};
  return FrameLayout{cfg.wave_width};
}

bool needs_epoch(std::size_t message_length, const FrameLayout& layout) {
  return ceil_div(message_length, layout.capacity()) > kCounterSpace;
}

std::vector<Frame> encode(std::span<const std::uint8_t> message, const FrameLayout& layout,
                          std::uint16_t magic) {
  if (message.empty()) throw std::invalid_argument("cannot encode an empty message");
  if (layout.words < 2) throw std::invalid_argument("frame layout needs at least two words");
  const bool epoch = needs_epoch(message.size(), layout);
  const auto cap = data_capacity(layout, epoch);
  const auto n = ceil_div(message.size(), cap);
  if (epoch && n > kCounterSpace * 256) throw std::invalid_argument("message too long");

  std::vector<Frame> frames;
  frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Frame f;
    f.magic = magic;
    f.counter = static_cast<std::uint32_t>(i);
    f.payload.assign(layout.capacity(), 0);
    std::size_t off = 0;
    if (epoch) f.payload[off++] = static_cast<std::uint8_t>(i >> 16);
    const auto begin = i * cap;
    const auto len = std::min(cap, message.size() - begin);
    std::copy_n(message.begin() + static_cast<std::ptrdiff_t>(begin), len,
                f.payload.begin() + static_cast<std::ptrdiff_t>(off));
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<std::uint32_t> frame_words(const Frame& f) {
  std::vector<std::uint32_t> w(1 + ceil_div(f.payload.size(), 4), 0);
  w[0] = f.header();
  for (std::size_t i = 0; i < f.payload.size(); ++i) {
    w[1 + i / 4] |= std::uint32_t{f.payload[i]} << (8 * (i % 4));
  }
  return w;
}

ReceiveResult receive(std::span<const std::uint32_t> words, const ReceiveOptions& options) {
  const auto& layout = options.layout;
  const bool epoch = options.message_length && needs_epoch(*options.message_length, layout);
  const auto cap = data_capacity(layout, epoch);
  const std::optional<std::size_t> expected =
      options.message_length ? std::optional(ceil_div(*options.message_length, cap)) : std::nullopt;

  ReceiveResult out;
  std::map<std::size_t, std::vector<std::uint8_t>> unique;
  for (std::size_t b = 0; b + layout.words <= words.size(); b += layout.words) {
    const auto header = words[b];
    if ((header >> 16) != options.magic) continue;
    std::vector<std::uint8_t> payload(layout.capacity());
    for (std::size_t i = 0; i < payload.size(); ++i) {
      payload[i] = static_cast<std::uint8_t>(words[b + 1 + i / 4] >> (8 * (i % 4)));
    }
    std::size_t counter = header & 0xffffu;
    if (epoch) counter |= std::size_t{payload[0]} << 16;
    // A counter past the message end can only be a magic collision.
    if (expected && counter >= *expected) continue;
    ++out.stats.frames_received;
    if (!unique.emplace(counter, std::move(payload)).second) ++out.stats.duplicates;
  }

  const std::size_t total =
      expected ? *expected : (unique.empty() ? 0 : unique.rbegin()->first + 1);
  out.stats.frames_sent = total;
  out.stats.losses = total - unique.size();
  const std::size_t length = options.message_length ? *options.message_length : total * cap;
  out.message.assign(unique.empty() ? 0 : length, 0);
  for (const auto& [counter, payload] : unique) {
    const auto begin = counter * cap;
    const auto len = std::min(cap, length - begin);
    std::copy_n(payload.begin() + (epoch ? 1 : 0), len,
                out.message.begin() + static_cast<std::ptrdiff_t>(begin));
    out.stats.payload_bytes_delivered += len;
  }
  return out;
}

ReceiveResult receive(std::span<const sim::LeakRecord> leaks, const ReceiveOptions& options) {
  // (dispatch, group, wave) -> lane values; first uninitialized read per lane wins.
  std::map<std::tuple<std::uint64_t, std::uint32_t, std::uint32_t>,
           std::map<std::uint32_t, std::uint32_t>>
      waves;
  for (const auto& r : leaks) {
    if (!r.was_uninitialized) continue;
    waves[{r.dispatch_id, r.group, r.wave_index}].emplace(r.lane, r.value);
  }
  std::vector<std::uint32_t> words;
  for (const auto& [key, lanes] : waves) {
    if (lanes.empty()) continue;
    const auto width = lanes.rbegin()->first + 1;
    std::vector<std::uint32_t> w(ceil_div(width, options.layout.words) * options.layout.words, 0);
    for (const auto& [lane, v] : lanes) w[lane] = v;
    words.insert(words.end(), w.begin(), w.end());
  }
  return receive(words, options);
}

RegisterWindow default_window(const sim::GpuConfig& cfg) {
  if (cfg.remap == sim::RemapPolicy::SeededPermutation) return {0, cfg.regs_per_thread};
  const std::uint32_t cells = std::min<std::uint32_t>(
      cfg.register_model == isa::RegisterModel::Quad ? 16 : 32, cfg.regs_per_thread);
  return {cfg.regs_per_thread - cells, cells};
}

isa::Program sender_kernel(const sim::GpuConfig& cfg, const RegisterWindow& window) {
  if (window.cells == 0 || window.base + window.cells > cfg.regs_per_thread) {
    throw std::invalid_argument("register window exceeds regs_per_thread");
  }
  using isa::Opcode;
  isa::Program p;
  p.name = "covert_send";
  p.model = cfg.register_model;
  p.declared_registers = window.base + window.cells;
  const auto first = isa::RegisterRef::from_cell(window.base, cfg.register_model);
  p.instructions.push_back(make(Opcode::LoadGlobal, first, {}, at_tid(0)));
  for (std::uint32_t c = window.base + 1; c < window.base + window.cells; ++c) {
    p.instructions.push_back(
        make(Opcode::MovReg, isa::RegisterRef::from_cell(c, cfg.register_model), {first}));
  }
  if (cfg.lifecycle == sim::Lifecycle::StoreResidue) {
    p.instructions.push_back(make(Opcode::StoreGlobal, std::nullopt, {first}, at_tid(1)));
  }
  p.instructions.push_back(make(Opcode::Exit, std::nullopt));
  return p;
}

namespace {

/// Quad programs claim whole four-cell registers.
std::uint32_t whole_registers(std::uint32_t cells, isa::RegisterModel model) {
  return model == isa::RegisterModel::Quad ? (cells + 3) / 4 * 4 : cells;
}

}  // namespace

isa::Program receiver_kernel(const sim::GpuConfig& cfg, const RegisterWindow& window) {
  if (window.base >= cfg.regs_per_thread) {
    throw std::invalid_argument("register window exceeds regs_per_thread");
  }
  isa::Program p;
  p.name = "covert_receive";
  p.model = cfg.register_model;
  p.declared_registers = whole_registers(window.base + 1, cfg.register_model);
  p.instructions.push_back(make(isa::Opcode::StoreGlobal, std::nullopt,
                                {isa::RegisterRef::from_cell(window.base, cfg.register_model)},
                                at_tid(0)));
  p.instructions.push_back(make(isa::Opcode::Exit, std::nullopt));
  return p;
}

isa::Program junk_kernel(const sim::GpuConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  isa::Program p;
  p.name = "junk";
  p.model = cfg.register_model;
  const auto n = 1 + rng.below(16);
  std::uint32_t highest = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto cell = static_cast<std::uint32_t>(rng.below(cfg.regs_per_thread));
    highest = std::max(highest, cell);
    p.instructions.push_back(make(isa::Opcode::MovImm,
                                  isa::RegisterRef::from_cell(cell, cfg.register_model),
                                  {isa::Immediate{rng.next_u32()}}));
  }
  p.instructions.push_back(make(isa::Opcode::Exit, std::nullopt));
  p.declared_registers = whole_registers(highest + 1, cfg.register_model);
  return p;
}

ReceiveResult transmit(sim::Simulator& sim, std::span<const std::uint8_t> message,
                       const TransmitOptions& options) {
  const auto& cfg = sim.config();
  const auto layout = layout_for(cfg);
  const auto window = options.window.value_or(default_window(cfg));
  const std::uint32_t S = options.sender_groups ? options.sender_groups : cfg.simd_units();
  const std::uint32_t R = options.receiver_groups ? options.receiver_groups : cfg.simd_units();
  const std::uint32_t W = cfg.wave_width;

  const auto frames = encode(message, layout, options.magic);
  const auto rounds = ceil_div(frames.size(), S);

  const auto frame_buf = sim.create_buffer(std::size_t{S} * W);
  const auto sink_buf = sim.create_buffer(std::size_t{S} * W);
  const auto recv_buf = sim.create_buffer(std::size_t{R} * W);
  std::map<std::uint32_t, sim::BufferId> send_bind{{0, frame_buf}};
  if (cfg.lifecycle == sim::Lifecycle::StoreResidue) send_bind[1] = sink_buf;
  const auto sender =
      sim::Dispatch::of(sender_kernel(cfg, window), S, W, send_bind);
  const auto receiver =
      sim::Dispatch::of(receiver_kernel(cfg, window), R, W, {{0, recv_buf}});

  const bool recording = sim.record_leaks();
  sim.set_record_leaks(false);
  std::vector<std::uint32_t> received;
  std::vector<std::uint32_t> staged(std::size_t{S} * W);
  std::uint64_t junk_seed = mix_seed(cfg.seed, 0x6a756e6bULL);
  for (std::size_t r = 0; r < rounds; ++r) {
    std::fill(staged.begin(), staged.end(), 0u);
    for (std::uint32_t g = 0; g < S; ++g) {
      const auto idx = r * S + g;
      if (idx >= frames.size()) break;
      const auto w = frame_words(frames[idx]);
      for (std::uint32_t l = 0; l < W; ++l) staged[std::size_t{g} * W + l] = w[l % w.size()];
    }
    sim.write_buffer(frame_buf, staged);
    for (std::uint32_t j = 0; j < options.junk_per_round; ++j) {
      junk_seed = mix_seed(junk_seed, j);
      sim.dispatch(sim::Dispatch::of(junk_kernel(cfg, junk_seed), cfg.simd_units(), W, {}));
    }
    sim.dispatch(sender);
    auto report = sim.dispatch(receiver);
    const auto& out = report.buffers.at(0);
    received.insert(received.end(), out.begin(), out.end());
  }
  sim.set_record_leaks(recording);

  auto result = receive(received, ReceiveOptions{layout, options.magic, message.size()});
  result.stats.frames_sent = frames.size();
  result.stats.simulated_dispatch_count = rounds * (2 + options.junk_per_round);
  return result;
}

std::vector<SweepCell> sweep(const sim::GpuConfig& cfg, const SweepOptions& options) {
  const auto layout = layout_for(cfg);
  Rng rng(mix_seed(cfg.seed, 0x5eedULL));
  std::vector<std::uint8_t> message(options.message_frames * layout.capacity());
  for (auto& b : message) b = static_cast<std::uint8_t>(rng.next_u32());

  std::vector<SweepCell> cells;
  for (auto s : options.sender_groups) {
    for (auto r : options.receiver_groups) {
      if (s == 0 || r == 0) throw std::invalid_argument("sweep grid values must be >= 1");
      sim::Simulator sim(cfg);
      TransmitOptions t;
      t.sender_groups = s;
      t.receiver_groups = r;
      const auto res = transmit(sim, message, t);
      SweepCell c;
      c.sender_groups = s;
      c.receiver_groups = r;
      c.stats = res.stats;
      c.rounds = ceil_div(res.stats.frames_sent, s);
      const double cost = static_cast<double>(c.rounds) *
                          (2.0 * options.launch_overhead + static_cast<double>(s) + r);
      c.bytes_per_dispatch = static_cast<double>(res.stats.payload_bytes_delivered) / cost;
      c.loss_rate = static_cast<double>(res.stats.losses) /
                    static_cast<double>(res.stats.frames_sent);
      cells.push_back(c);
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells) {
  out << "sender_groups,receiver_groups,bytes_per_dispatch,loss_rate\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", c.bytes_per_dispatch, c.loss_rate);
    out << c.sender_groups << ',' << c.receiver_groups << ',' << buf << '\n';
  }
}

}  // namespace stalereg::covert
