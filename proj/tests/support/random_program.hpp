#pragma once

// Seeded generator of valid straight-line programs whose memory accesses stay
// in bounds for buffers of at least `group_count * group_size + 4` words.

#include <cstdint>

#include "stalereg/isa.hpp"
#include "stalereg/rng.hpp"

namespace stalereg::testing {

struct RandomProgramOptions {
  isa::RegisterModel model = isa::RegisterModel::Scalar;
  std::uint32_t registers = 6;  ///< general registers (quad: 4 cells each)
  std::uint32_t length = 12;    ///< instructions before exit
  std::uint32_t buffers = 2;    ///< b0 .. b{buffers-1}
};

inline isa::Program random_program(Rng& rng, const RandomProgramOptions& o = {}) {
  using namespace isa;
  const bool quad = o.model == RegisterModel::Quad;
  auto reg = [&] {
    const auto i = static_cast<std::uint32_t>(rng.below(o.registers));
    return quad ? RegisterRef::quad(i, static_cast<Component>(rng.below(4))) : RegisterRef::general(i);
  };
  auto special = [&] { return RegisterRef::special(static_cast<SpecialRegister>(rng.below(4))); };
  auto src = [&]() -> Operand {
    const auto k = rng.below(6);
    if (k == 0) return Immediate{rng.next_u32()};
    if (k == 1) return special();
    return reg();
  };
  auto addr = [&]() -> Operand {
    // tid and ltid index every thread; small immediates are always in range.
    switch (rng.below(3)) {
      case 0: return RegisterRef::special(SpecialRegister::ThreadId);
      case 1: return RegisterRef::special(SpecialRegister::LocalThreadId);
      default: return Immediate{static_cast<std::uint32_t>(rng.below(4))};
    }
  };
  auto buffer = [&] { return static_cast<std::uint32_t>(rng.below(o.buffers)); };

  Program p;
  p.name = "random";
  p.model = o.model;
  p.declared_registers = quad ? o.registers * 4 : o.registers;
  for (std::uint32_t k = 0; k < o.length; ++k) {
    Instruction in;
    switch (rng.below(10)) {
      case 0: in = {Opcode::MovImm, reg(), {Immediate{rng.next_u32()}}, std::nullopt}; break;
      case 1: in = {Opcode::MovReg, reg(), {rng.below(4) ? Operand{reg()} : Operand{special()}}, std::nullopt}; break;
      case 2: in = {Opcode::IAdd, reg(), {reg(), src()}, std::nullopt}; break;
      case 3: in = {Opcode::IShl, reg(), {reg(), src()}, std::nullopt}; break;
      case 4: in = {Opcode::FAdd, reg(), {reg(), src()}, std::nullopt}; break;
      case 5: in = {Opcode::GetThreadId, reg(), {}, std::nullopt}; break;
      case 6: in = {Opcode::GetGroupId, reg(), {}, std::nullopt}; break;
      case 7: in = {Opcode::LoadGlobal, reg(), {}, MemoryRef{buffer(), addr()}}; break;
      case 8: in = {Opcode::StoreGlobal, std::nullopt, {reg()}, MemoryRef{buffer(), addr()}}; break;
      default: in = {Opcode::Nop, std::nullopt, {}, std::nullopt}; break;
    }
    p.instructions.push_back(std::move(in));
  }
  p.instructions.push_back({Opcode::Exit, std::nullopt, {}, std::nullopt});
  return p;
}

}  // namespace stalereg::testing
