#pragma once

#include <set>
#include <vector>

#include "stalereg/isa.hpp"

namespace stalereg::sanitize {

enum class Decision { Accept, Reject };

struct Violation {
  std::size_t instruction = 0;
  isa::RegisterRef reg;
  bool operator==(const Violation&) const = default;
};

/// decision == Reject exactly when violations is non-empty.
struct Verdict {
  Decision decision = Decision::Accept;
  std::vector<Violation> violations;
};

struct AnalyzerOptions {
  /// Registers the runtime initializes before the shader starts.
  std::set<isa::RegisterRef> abi_registers;
};

Verdict analyze(const isa::Program& p, const AnalyzerOptions& options = {});

enum class CleanupMode {
  WrittenOnly,  ///< zero every register the program defines
  FullWindow,   ///< zero every cell of the declared window
};

/// Inserts `mov_imm reg, 0` for the selected registers immediately before exit.
isa::Program rewrite_cleanup(const isa::Program& p, CleanupMode mode = CleanupMode::WrittenOnly);

}  // namespace stalereg::sanitize
