#include "stalereg/sanitize.hpp"

#include <algorithm>

namespace stalereg::sanitize {

Verdict analyze(const isa::Program& p, const AnalyzerOptions& options) {
  Verdict v;
  for (const auto& u : isa::uninitialized_reads(p, options.abi_registers)) {
    v.violations.push_back(Violation{u.instruction, u.reg});
  }
  v.decision = v.violations.empty() ? Decision::Accept : Decision::Reject;
  return v;
}

isa::Program rewrite_cleanup(const isa::Program& p, CleanupMode mode) {
  std::vector<isa::RegisterRef> regs;
  if (mode == CleanupMode::WrittenOnly) {
    const auto w = isa::write_set(p);
    regs.assign(w.begin(), w.end());
  } else {
    for (std::uint32_t c = 0; c < p.declared_registers; ++c) {
      regs.push_back(isa::RegisterRef::from_cell(c, p.model));
    }
  }
  if (regs.empty()) return p;

  isa::Program out = p;
  auto exit_it = std::find_if(out.instructions.begin(), out.instructions.end(),
                              [](const isa::Instruction& i) { return i.op == isa::Opcode::Exit; });
  std::vector<isa::Instruction> zeroes;
  for (const auto& r : regs) {
    zeroes.push_back(isa::Instruction{isa::Opcode::MovImm, r, {isa::Immediate{0}}, std::nullopt});
  }
  out.instructions.insert(exit_it, zeroes.begin(), zeroes.end());
  return out;
}

}  // namespace stalereg::sanitize
