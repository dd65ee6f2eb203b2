#include "stalereg/sim.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "stalereg/rng.hpp"

namespace stalereg::sim {

struct Simulator::SimdUnit {
  std::vector<std::uint32_t> cells;
  std::vector<std::uint8_t> written;
  std::vector<std::uint32_t> residue;
};

namespace detail {

struct WaveState {
  Simulator* sim = nullptr;
  const Dispatch* dispatch = nullptr;
  ExecutionReport* report = nullptr;
  const std::vector<std::uint32_t>* remap = nullptr;
  Simulator::SimdUnit* unit = nullptr;
  std::uint64_t dispatch_id = 0;
  std::uint32_t core = 0;
  std::uint32_t simd = 0;
  std::uint32_t group = 0;
  std::uint32_t wave = 0;
  std::uint32_t lanes = 0;

  const GpuConfig& cfg() const { return sim->cfg_; }

  std::uint32_t thread_id(std::uint32_t lane) const {
    return group * dispatch->group_size + local_id(lane);
  }
  std::uint32_t local_id(std::uint32_t lane) const { return wave * cfg().wave_width + lane; }

  std::size_t slot(const isa::RegisterRef& r, std::uint32_t lane) const {
    const auto cell = r.cell();
    if (cell >= remap->size()) {
      throw SimError("register " + isa::to_string(r) + " outside the dispatch's register window");
    }
    return static_cast<std::size_t>(lane) * cfg().regs_per_thread + (*remap)[cell];
  }

  std::uint32_t read(const isa::RegisterRef& r, std::uint32_t lane) {
    if (r.is_special()) {
      switch (static_cast<isa::SpecialRegister>(r.index)) {
        case isa::SpecialRegister::ThreadId: return thread_id(lane);
        case isa::SpecialRegister::LocalThreadId: return local_id(lane);
        case isa::SpecialRegister::GroupId: return group;
        case isa::SpecialRegister::Lane: return lane;
      }
      throw SimError("unknown special register");
    }
    const auto s = slot(r, lane);
    if (unit->written[s]) return unit->cells[s];
    std::uint32_t value = cfg().lifecycle == Lifecycle::StoreResidue
                              ? unit->residue[lane % cfg().half_wave()]
                              : unit->cells[s];
    if (sim->record_leaks_) {
      report->leaks.push_back(
          LeakRecord{dispatch_id, core, simd, group, wave, lane, r, value, true});
    }
    return value;
  }

  void write(const isa::RegisterRef& r, std::uint32_t lane, std::uint32_t value) {
    if (!r.is_general()) throw SimError("special registers are read-only");
    const auto s = slot(r, lane);
    unit->cells[s] = value;
    unit->written[s] = 1;
  }

  std::vector<std::uint32_t>& bound(std::uint32_t handle) const {
    auto it = dispatch->buffers.find(handle);
    if (it == dispatch->buffers.end()) {
      throw SimError("buffer handle b" + std::to_string(handle) + " is not bound");
    }
    return sim->buffer(it->second);
  }

  std::uint32_t load(std::uint32_t handle, std::size_t addr) const {
    auto& buf = bound(handle);
    if (addr >= buf.size()) {
      throw SimError("out-of-bounds load b" + std::to_string(handle) + "[" +
                     std::to_string(addr) + "]");
    }
    return buf[addr];
  }

  void store_values(std::uint32_t handle, std::span<const std::size_t> addrs,
                    std::span<const std::uint32_t> values) {
    auto& buf = bound(handle);
    for (std::size_t l = 0; l < addrs.size(); ++l) {
      if (addrs[l] >= buf.size()) {
        throw SimError("out-of-bounds store b" + std::to_string(handle) + "[" +
                       std::to_string(addrs[l]) + "]");
      }
    }
    for (std::size_t l = 0; l < addrs.size(); ++l) buf[addrs[l]] = values[l];
    bool coalesced = !addrs.empty();
    for (std::size_t l = 1; l < addrs.size(); ++l) {
      if (addrs[l] != addrs[0] + l) {
        coalesced = false;
        break;
      }
    }
    if (coalesced) update_residue(values);
  }

  void update_residue(std::span<const std::uint32_t> values) {
    const auto half = cfg().half_wave();
    auto transaction = [&](std::uint32_t first_lane) {
      for (std::uint32_t i = 0; i < half && first_lane + i < values.size(); ++i) {
        unit->residue[i] = values[first_lane + i];
      }
    };
    const bool upper_active = values.size() > half;
    if (cfg().half_wave_order == HalfWaveOrder::LowerFirst) {
      transaction(0);
      if (upper_active) transaction(half);
    } else {
      if (upper_active) transaction(half);
      transaction(0);
    }
  }
};

}  // namespace detail

namespace {

std::uint32_t waves_per_group(const GpuConfig& cfg, std::uint32_t group_size) {
  return (group_size + cfg.wave_width - 1) / cfg.wave_width;
}

std::uint32_t declared_of(const Kernel& k) {
  if (auto* p = std::get_if<isa::Program>(&k)) return p->declared_registers;
  return std::get<NativeKernel>(k).declared_registers;
}

void execute_program(const isa::Program& p, detail::WaveState& w) {
  using isa::Opcode;
  const auto n = w.lanes;
  std::vector<std::size_t> addrs(n);
  std::vector<std::uint32_t> values(n);

  auto operand = [&](const isa::Operand& o, std::uint32_t lane) -> std::uint32_t {
    if (auto* r = std::get_if<isa::RegisterRef>(&o)) return w.read(*r, lane);
    return std::get<isa::Immediate>(o).bits;
  };

  for (const auto& inst : p.instructions) {
    switch (inst.op) {
      case Opcode::MovImm:
      case Opcode::MovReg:
        for (std::uint32_t l = 0; l < n; ++l) w.write(*inst.dst, l, operand(inst.srcs[0], l));
        break;
      case Opcode::IAdd:
        for (std::uint32_t l = 0; l < n; ++l) {
          const auto a = operand(inst.srcs[0], l);
          const auto b = operand(inst.srcs[1], l);
          w.write(*inst.dst, l, a + b);
        }
        break;
      case Opcode::IShl:
        for (std::uint32_t l = 0; l < n; ++l) {
          const auto a = operand(inst.srcs[0], l);
          const auto b = operand(inst.srcs[1], l);
          w.write(*inst.dst, l, b >= 32 ? 0u : a << b);
        }
        break;
      case Opcode::FAdd:
        for (std::uint32_t l = 0; l < n; ++l) {
          const auto a = std::bit_cast<float>(operand(inst.srcs[0], l));
          const auto b = std::bit_cast<float>(operand(inst.srcs[1], l));
          w.write(*inst.dst, l, std::bit_cast<std::uint32_t>(a + b));
        }
        break;
      case Opcode::GetThreadId:
        for (std::uint32_t l = 0; l < n; ++l) w.write(*inst.dst, l, w.thread_id(l));
        break;
      case Opcode::GetGroupId:
        for (std::uint32_t l = 0; l < n; ++l) w.write(*inst.dst, l, w.group);
        break;
      case Opcode::LoadGlobal:
        for (std::uint32_t l = 0; l < n; ++l) {
          const auto addr = operand(inst.mem->offset, l);
          values[l] = w.load(inst.mem->buffer, addr);
        }
        for (std::uint32_t l = 0; l < n; ++l) w.write(*inst.dst, l, values[l]);
        break;
      case Opcode::StoreGlobal:
        for (std::uint32_t l = 0; l < n; ++l) {
          values[l] = operand(inst.srcs[0], l);
          addrs[l] = operand(inst.mem->offset, l);
        }
        w.store_values(inst.mem->buffer, addrs, values);
        break;
      case Opcode::StoreTile: {
        // Tile memory writes bypass the global store path (no coalescing residue).
        auto& buf = w.bound(inst.mem->buffer);
        for (std::uint32_t l = 0; l < n; ++l) {
          std::array<std::uint32_t, 4> rgba{};
          for (std::size_t k = 0; k < 4; ++k) rgba[k] = operand(inst.srcs[k], l);
          const std::size_t base = static_cast<std::size_t>(operand(inst.mem->offset, l)) * 4;
          if (base + 4 > buf.size()) {
            throw SimError("out-of-bounds tile store b" + std::to_string(inst.mem->buffer));
          }
          std::copy(rgba.begin(), rgba.end(), buf.begin() + static_cast<std::ptrdiff_t>(base));
        }
        break;
      }
      case Opcode::Nop:
        break;
      case Opcode::Exit:
        return;
    }
  }
}

}  // namespace

// ---- WaveContext ----------------------------------------------------------

std::uint32_t WaveContext::active_lanes() const { return state_->lanes; }
std::uint32_t WaveContext::group() const { return state_->group; }
std::uint32_t WaveContext::wave() const { return state_->wave; }
std::uint32_t WaveContext::group_size() const { return state_->dispatch->group_size; }
std::uint32_t WaveContext::thread_id(std::uint32_t lane) const { return state_->thread_id(lane); }
std::uint32_t WaveContext::local_id(std::uint32_t lane) const { return state_->local_id(lane); }

std::uint32_t WaveContext::read(const isa::RegisterRef& r, std::uint32_t lane) {
  return state_->read(r, lane);
}
float WaveContext::read_float(const isa::RegisterRef& r, std::uint32_t lane) {
  return std::bit_cast<float>(state_->read(r, lane));
}
void WaveContext::write(const isa::RegisterRef& r, std::uint32_t lane, std::uint32_t value) {
  state_->write(r, lane, value);
}
void WaveContext::write_float(const isa::RegisterRef& r, std::uint32_t lane, float value) {
  state_->write(r, lane, std::bit_cast<std::uint32_t>(value));
}
std::uint32_t WaveContext::load(std::uint32_t handle, std::size_t addr) const {
  return state_->load(handle, addr);
}
float WaveContext::load_float(std::uint32_t handle, std::size_t addr) const {
  return std::bit_cast<float>(state_->load(handle, addr));
}
void WaveContext::store(std::uint32_t handle, std::span<const std::size_t> addrs,
                        const isa::RegisterRef& src) {
  if (addrs.size() != state_->lanes) throw SimError("store needs one address per active lane");
  std::vector<std::uint32_t> values(addrs.size());
  for (std::uint32_t l = 0; l < addrs.size(); ++l) values[l] = state_->read(src, l);
  state_->store_values(handle, addrs, values);
}

// ---- remap ----------------------------------------------------------------

std::vector<std::uint32_t> remap_table(RemapPolicy policy, std::uint64_t seed,
                                       std::uint64_t dispatch_id, std::uint32_t window) {
  std::vector<std::uint32_t> table(window);
  std::iota(table.begin(), table.end(), 0u);
  if (policy == RemapPolicy::SeededPermutation) {
    Rng rng(mix_seed(seed ^ 0x5eed5eed5eedULL, dispatch_id));
    rng.shuffle(std::span<std::uint32_t>(table));
  }
  return table;
}

std::uint32_t apply_remap(RemapPolicy policy, std::uint64_t seed, std::uint64_t dispatch_id,
                          std::uint32_t window, std::uint32_t arch_cell) {
  if (arch_cell >= window) throw SimError("architectural cell outside register window");
  if (policy == RemapPolicy::Identity) return arch_cell;
  return remap_table(policy, seed, dispatch_id, window)[arch_cell];
}

// ---- Dispatch -------------------------------------------------------------

Dispatch Dispatch::of(isa::Program p, std::uint32_t groups, std::uint32_t group_size,
                      std::map<std::uint32_t, BufferId> buffers) {
  return Dispatch{std::make_shared<const Kernel>(std::move(p)), groups, group_size,
                  std::move(buffers)};
}

Dispatch Dispatch::of(NativeKernel k, std::uint32_t groups, std::uint32_t group_size,
                      std::map<std::uint32_t, BufferId> buffers) {
  return Dispatch{std::make_shared<const Kernel>(std::move(k)), groups, group_size,
                  std::move(buffers)};
}

// ---- Simulator ------------------------------------------------------------

Simulator::Simulator(GpuConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  units_.resize(cfg_.simd_units());
  const std::size_t cells = static_cast<std::size_t>(cfg_.regs_per_thread) * cfg_.wave_width;
  for (auto& u : units_) {
    u.cells.assign(cells, 0);
    u.written.assign(cells, 0);
    u.residue.assign(cfg_.half_wave(), 0);
  }
}

Simulator::~Simulator() = default;
Simulator::Simulator(Simulator&&) noexcept = default;
Simulator& Simulator::operator=(Simulator&&) noexcept = default;

Simulator::SimdUnit& Simulator::unit(std::uint32_t core, std::uint32_t simd) {
  if (core >= cfg_.num_cores || simd >= cfg_.simd_per_core) throw SimError("no such SIMD unit");
  return units_[static_cast<std::size_t>(core) * cfg_.simd_per_core + simd];
}

const Simulator::SimdUnit& Simulator::unit(std::uint32_t core, std::uint32_t simd) const {
  if (core >= cfg_.num_cores || simd >= cfg_.simd_per_core) throw SimError("no such SIMD unit");
  return units_[static_cast<std::size_t>(core) * cfg_.simd_per_core + simd];
}

std::vector<std::uint32_t>& Simulator::buffer(BufferId id) {
  if (id >= buffers_.size()) throw SimError("unknown buffer " + std::to_string(id));
  return buffers_[id];
}

const std::vector<std::uint32_t>& Simulator::buffer(BufferId id) const {
  if (id >= buffers_.size()) throw SimError("unknown buffer " + std::to_string(id));
  return buffers_[id];
}

BufferId Simulator::create_buffer(std::size_t words) {
  buffers_.emplace_back(words, 0u);
  return static_cast<BufferId>(buffers_.size() - 1);
}

BufferId Simulator::upload(std::span<const std::uint32_t> words) {
  buffers_.emplace_back(words.begin(), words.end());
  return static_cast<BufferId>(buffers_.size() - 1);
}

BufferId Simulator::upload_floats(std::span<const float> values) {
  std::vector<std::uint32_t> w(values.size());
  std::transform(values.begin(), values.end(), w.begin(),
                 [](float f) { return std::bit_cast<std::uint32_t>(f); });
  return upload(w);
}

void Simulator::write_buffer(BufferId id, std::span<const std::uint32_t> words) {
  auto& b = buffer(id);
  if (words.size() != b.size()) throw SimError("write_buffer size mismatch");
  std::copy(words.begin(), words.end(), b.begin());
}

std::span<const std::uint32_t> Simulator::words(BufferId id) const { return buffer(id); }

std::vector<float> Simulator::read_floats(BufferId id) const {
  const auto& b = buffer(id);
  std::vector<float> out(b.size());
  std::transform(b.begin(), b.end(), out.begin(),
                 [](std::uint32_t w) { return std::bit_cast<float>(w); });
  return out;
}

std::vector<std::uint8_t> Simulator::read_buffer(BufferId id) const {
  const auto& b = buffer(id);
  std::vector<std::uint8_t> out;
  out.reserve(b.size() * 4);
  for (auto w : b) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(w >> (8 * k)));
  }
  return out;
}

std::span<const std::uint32_t> Simulator::residue(std::uint32_t core, std::uint32_t simd) const {
  return unit(core, simd).residue;
}

void Simulator::coalesced_store(std::uint32_t core, std::uint32_t simd,
                                std::span<const std::uint32_t> lane_values, BufferId id,
                                std::size_t base) {
  if (lane_values.size() > cfg_.wave_width) throw SimError("more lane values than lanes");
  auto& b = buffer(id);
  if (base + lane_values.size() > b.size()) throw SimError("out-of-bounds coalesced store");
  std::copy(lane_values.begin(), lane_values.end(), b.begin() + static_cast<std::ptrdiff_t>(base));
  detail::WaveState w;
  w.sim = this;
  w.unit = &unit(core, simd);
  w.update_residue(lane_values);
}

ExecutionReport Simulator::dispatch(const Dispatch& d) {
  return std::move(run(std::span<const Dispatch>(&d, 1)).front());
}

std::vector<ExecutionReport> Simulator::dispatch_concurrent(std::span<const Dispatch> ds) {
  return run(ds);
}

std::vector<ExecutionReport> Simulator::run(std::span<const Dispatch> ds) {
  struct Task {
    std::uint32_t group;
    std::uint32_t wave;
    std::uint32_t simd;
  };
  struct Plan {
    std::uint64_t id;
    std::vector<std::uint32_t> remap;
    std::vector<std::vector<Task>> per_core;
  };

  std::vector<Plan> plans;
  std::vector<ExecutionReport> reports(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& d = ds[i];
    if (!d.kernel) throw SimError("dispatch has no kernel");
    if (d.group_size == 0 || d.group_size > 1024) {
      throw SimError("thread group size must be in [1, 1024], got " + std::to_string(d.group_size));
    }
    if (d.group_count == 0) throw SimError("dispatch needs at least one thread group");
    const auto declared = declared_of(*d.kernel);
    if (declared > cfg_.regs_per_thread) {
      throw SimError("kernel claims " + std::to_string(declared) + " register cells, config has " +
                     std::to_string(cfg_.regs_per_thread));
    }
    if (auto* p = std::get_if<isa::Program>(d.kernel.get())) {
      if (p->model != cfg_.register_model) {
        throw SimError("program register model does not match the GPU configuration");
      }
      isa::validate(*p, cfg_.regs_per_thread);
      for (const auto& inst : p->instructions) {
        if (inst.mem && !d.buffers.count(inst.mem->buffer)) {
          throw SimError("buffer handle b" + std::to_string(inst.mem->buffer) + " is not bound");
        }
      }
    }
    for (const auto& [handle, id] : d.buffers) (void)buffer(id);

    Plan plan;
    plan.id = next_dispatch_id_++;
    plan.remap = remap_table(cfg_.remap, cfg_.seed, plan.id, declared);
    plan.per_core.resize(cfg_.num_cores);
    reports[i].dispatch_id = plan.id;
    reports[i].group_core.resize(d.group_count);

    std::vector<std::vector<std::uint32_t>> groups(cfg_.num_cores);
    for (std::uint32_t g = 0; g < d.group_count; ++g) {
      groups[g % cfg_.num_cores].push_back(g);
      reports[i].group_core[g] = g % cfg_.num_cores;
    }
    Rng jitter(mix_seed(cfg_.seed ^ 0x717e7ULL, plan.id));
    const auto waves = waves_per_group(cfg_, d.group_size);
    for (std::uint32_t c = 0; c < cfg_.num_cores; ++c) {
      if (cfg_.jitter) jitter.shuffle(std::span<std::uint32_t>(groups[c]));
      std::uint32_t counter = 0;
      for (auto g : groups[c]) {
        for (std::uint32_t w = 0; w < waves; ++w) {
          plan.per_core[c].push_back(Task{g, w, counter++ % cfg_.simd_per_core});
        }
      }
    }
    plans.push_back(std::move(plan));
  }

  for (std::uint32_t c = 0; c < cfg_.num_cores; ++c) {
    std::size_t longest = 0;
    for (const auto& p : plans) longest = std::max(longest, p.per_core[c].size());
    for (std::size_t k = 0; k < longest; ++k) {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& tasks = plans[i].per_core[c];
        if (k >= tasks.size()) continue;
        const auto& t = tasks[k];
        const auto& d = ds[i];
        auto& u = unit(c, t.simd);
        std::fill(u.written.begin(), u.written.end(), 0);
        if (cfg_.lifecycle == Lifecycle::ZeroOnAlloc) std::fill(u.cells.begin(), u.cells.end(), 0u);

        detail::WaveState w;
        w.sim = this;
        w.dispatch = &d;
        w.report = &reports[i];
        w.remap = &plans[i].remap;
        w.unit = &u;
        w.dispatch_id = plans[i].id;
        w.core = c;
        w.simd = t.simd;
        w.group = t.group;
        w.wave = t.wave;
        w.lanes = std::min(cfg_.wave_width, d.group_size - t.wave * cfg_.wave_width);

        if (auto* p = std::get_if<isa::Program>(d.kernel.get())) {
          execute_program(*p, w);
        } else {
          WaveContext ctx(w);
          std::get<NativeKernel>(*d.kernel).body(ctx);
        }
      }
    }
  }

  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (const auto& [handle, id] : ds[i].buffers) reports[i].buffers[handle] = buffer(id);
  }
  return reports;
}

void write_leaks_csv(std::ostream& out, std::span<const LeakRecord> leaks) {
  out << "dispatch,core,simd,wave,lane,reg,value_hex,uninit\n";
  char hex[16];
  for (const auto& r : leaks) {
    std::snprintf(hex, sizeof hex, "0x%08x", r.value);
    out << r.dispatch_id << ',' << r.core << ',' << r.simd << ',' << r.wave_index << ','
        << r.lane << ',' << isa::to_string(r.arch_register) << ',' << hex << ','
        << (r.was_uninitialized ? 1 : 0) << '\n';
  }
}

}  // namespace stalereg::sim
