#include "stalereg/sanitize.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "random_program.hpp"
#include "stalereg/sim.hpp"

namespace stalereg::sanitize {
namespace {

using isa::Component;
using isa::RegisterRef;

isa::Program fixture(const std::string& name) {
  std::ifstream in(std::filesystem::path(STALEREG_KERNELS_DIR) / name);
  std::ostringstream s;
  s << in.rdbuf();
  return isa::parse_program(s.str());
}

TEST(Analyze, AttackerFixturesAreRejected) {
  const auto nv = analyze(fixture("attacker_nvidia.asm"));
  EXPECT_EQ(nv.decision, Decision::Reject);
  EXPECT_EQ(nv.violations, (std::vector<Violation>{{1, RegisterRef::general(8)}}));
  const auto ad = analyze(fixture("attacker_adreno.asm"));
  EXPECT_EQ(ad.decision, Decision::Reject);
  EXPECT_EQ(ad.violations, (std::vector<Violation>{{2, RegisterRef::quad(2, Component::X)}}));
  EXPECT_EQ(analyze(fixture("attacker_agx.asm")).decision, Decision::Reject);
}

TEST(Analyze, FragmentShaderIsAccepted) {
  const auto v = analyze(fixture("fragment_agx.asm"));
  EXPECT_EQ(v.decision, Decision::Accept);
  EXPECT_TRUE(v.violations.empty());
}

TEST(Analyze, AbiRegistersCountAsInitialized) {
  const auto p = isa::parse_program(".model quad\nmov r0.x, r51.w\nst_global [b0+tid], r0.x\nexit");
  EXPECT_EQ(analyze(p).decision, Decision::Reject);
  AnalyzerOptions o;
  o.abi_registers = {RegisterRef::quad(51, Component::W)};
  EXPECT_EQ(analyze(p, o).decision, Decision::Accept);
}

TEST(Analyze, EveryOffendingUseIsReported) {
  const auto v = analyze(isa::parse_program("iadd r0, r1, r2\nst_global [b0+r3], r1\nexit"));
  EXPECT_EQ(v.violations, (std::vector<Violation>{{0, RegisterRef::general(1)},
                                                  {0, RegisterRef::general(2)},
                                                  {1, RegisterRef::general(1)},
                                                  {1, RegisterRef::general(3)}}));
}

// Straight-line programs execute every instruction: the flagged registers equal
// the uninitialized reads the simulator observes.
TEST(Property, VerdictAgreesWithSimulatedReads) {
  std::size_t accepted = 0;
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    testing::RandomProgramOptions o;
    o.model = i % 2 ? isa::RegisterModel::Quad : isa::RegisterModel::Scalar;
    o.registers = 1 + static_cast<std::uint32_t>(rng.below(4));
    o.length = static_cast<std::uint32_t>(rng.below(10));
    const auto p = testing::random_program(rng, o);
    const auto verdict = analyze(p);

    sim::Simulator s(sim::profile(o.model == isa::RegisterModel::Quad ? "adreno" : "agx"));
    const auto cells = p.declared_registers;
    s.dispatch(sim::Dispatch::of(sim::NativeKernel{"dirty", cells,
                                                   [&](sim::WaveContext& ctx) {
                                                     for (std::uint32_t c = 0; c < cells; ++c) {
                                                       for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
                                                         ctx.write(RegisterRef::from_cell(c, o.model), l, 0x5a5a0000u + c);
                                                       }
                                                     }
                                                   }},
                                 4, 64, {}));
    std::map<std::uint32_t, sim::BufferId> bufs{{0, s.create_buffer(4 * 64 + 4)},
                                                {1, s.create_buffer(4 * 64 + 4)}};
    const auto report = s.dispatch(sim::Dispatch::of(p, 4, 64, bufs));

    std::set<RegisterRef> flagged, observed;
    for (const auto& v : verdict.violations) flagged.insert(v.reg);
    for (const auto& l : report.leaks) {
      ASSERT_TRUE(l.was_uninitialized);
      observed.insert(l.arch_register);
    }
    ASSERT_EQ(verdict.decision == Decision::Accept, verdict.violations.empty());
    ASSERT_EQ(flagged, observed) << isa::render_program(p);
    if (verdict.decision == Decision::Accept) ++accepted;
  }
  EXPECT_GE(accepted, 100u);
}

TEST(Rewrite, WrittenOnlyZeroesDefinedRegisters) {
  const auto p = isa::parse_program(".regs 4\nget_tid r0\niadd r2, r0, 7\nst_global [b0+tid], r2\nexit");
  const auto q = rewrite_cleanup(p, CleanupMode::WrittenOnly);
  ASSERT_EQ(q.instructions.size(), p.instructions.size() + 2);
  EXPECT_EQ(q.instructions.back().op, isa::Opcode::Exit);
  EXPECT_EQ(isa::render_program(q).find("mov_imm r1"), std::string::npos);
  EXPECT_EQ(analyze(q).decision, Decision::Accept);
  EXPECT_EQ(q.declared_registers, p.declared_registers);
}

TEST(Rewrite, FullWindowZeroesEveryCell) {
  const auto p = isa::parse_program(".model quad\n.regs 8\nmov_imm r0.x, 1\nexit");
  const auto q = rewrite_cleanup(p, CleanupMode::FullWindow);
  EXPECT_EQ(q.instructions.size(), 1u + 8u + 1u);
  EXPECT_EQ(isa::parse_program(isa::render_program(q)), q);
}

struct Differential {
  std::vector<std::uint32_t> victim_out;
  std::vector<std::vector<std::uint32_t>> dumps;  ///< per cell
};

Differential victim_then_attacker(const sim::GpuConfig& cfg, const isa::Program& victim) {
  sim::Simulator s(cfg);
  const std::uint32_t groups = cfg.num_cores * cfg.simd_per_core, size = 64;
  const auto out = s.create_buffer(groups * size);
  s.dispatch(sim::Dispatch::of(victim, groups, size, {{0, out}}));

  isa::Program dump;
  dump.name = "dump";
  dump.model = victim.model;
  dump.declared_registers = victim.declared_registers;
  std::map<std::uint32_t, sim::BufferId> bind;
  for (std::uint32_t c = 0; c < victim.declared_registers; ++c) {
    bind[c] = s.create_buffer(groups * size);
    dump.instructions.push_back({isa::Opcode::StoreGlobal, std::nullopt, {RegisterRef::from_cell(c, dump.model)},
                                 isa::MemoryRef{c, RegisterRef::special(isa::SpecialRegister::ThreadId)}});
  }
  dump.instructions.push_back({isa::Opcode::Exit, std::nullopt, {}, std::nullopt});
  s.dispatch(sim::Dispatch::of(dump, groups, size, bind));

  Differential d;
  const auto w = s.words(out);
  d.victim_out.assign(w.begin(), w.end());
  for (const auto& [c, id] : bind) d.dumps.emplace_back(s.words(id).begin(), s.words(id).end());
  return d;
}

bool all_zero(const std::vector<std::uint32_t>& v) {
  return std::all_of(v.begin(), v.end(), [](std::uint32_t x) { return x == 0; });
}

TEST(Rewrite, CleanupRemovesTheResidueWithoutChangingOutputs) {
  const auto victim = isa::parse_program(
      ".regs 4\nget_tid r0\niadd r1, r0, 7\nishl r2, r1, 3\nst_global [b0+tid], r2\nexit");
  auto cfg = sim::profile("agx");
  cfg.remap = sim::RemapPolicy::Identity;

  const auto before = victim_then_attacker(cfg, victim);
  const auto written = victim_then_attacker(cfg, rewrite_cleanup(victim, CleanupMode::WrittenOnly));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_FALSE(all_zero(before.dumps[c])) << c;
    EXPECT_TRUE(all_zero(written.dumps[c])) << c;
  }
  EXPECT_EQ(written.victim_out, before.victim_out);

  // Under the remap only a full-window cleanup covers the window.
  cfg.remap = sim::RemapPolicy::SeededPermutation;
  const auto full = victim_then_attacker(cfg, rewrite_cleanup(victim, CleanupMode::FullWindow));
  for (const auto& d : full.dumps) EXPECT_TRUE(all_zero(d));
  EXPECT_EQ(full.victim_out, before.victim_out);
}

TEST(Rewrite, QuadVictimCleanup) {
  const auto victim = isa::parse_program(
      ".model quad\n.regs 8\nget_tid r0.x\nmov_imm r1.z, 0x3f800000\nst_global [b0+tid], r1.z\nexit");
  const auto cfg = sim::profile("adreno");
  const auto before = victim_then_attacker(cfg, victim);
  EXPECT_FALSE(all_zero(before.dumps[6]));
  const auto after = victim_then_attacker(cfg, rewrite_cleanup(victim, CleanupMode::FullWindow));
  for (const auto& d : after.dumps) EXPECT_TRUE(all_zero(d));
  EXPECT_EQ(after.victim_out, before.victim_out);
}

}  // namespace
}  // namespace stalereg::sanitize
