#pragma once

// Vendor-neutral mini shader ISA shared by victim and attacker kernels.
//
// Text format, one instruction per line, `//` comments:
//
//   .kernel leak_r8          // optional name
//   .model scalar            // scalar (default) or quad (rN.x .. rN.w)
//   .regs 9                  // optional; cells claimed, default = highest used + 1
//   get_tid r1
//   st_global [b0+r1], r8
//   exit
//
// Special registers: tid (global thread id), ltid (thread id in group),
// gid (group id), lane (lane in wave). They are read-only.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace stalereg::isa {

enum class RegisterModel : std::uint8_t { Scalar, Quad };
enum class RegisterClass : std::uint8_t { General, Special };
enum class Component : std::uint8_t { X = 0, Y = 1, Z = 2, W = 3 };
enum class SpecialRegister : std::uint32_t { ThreadId = 0, LocalThreadId = 1, GroupId = 2, Lane = 3 };

struct RegisterRef {
  RegisterClass cls = RegisterClass::General;
  std::uint32_t index = 0;
  std::optional<Component> component;

  static RegisterRef general(std::uint32_t index, std::optional<Component> c = std::nullopt) {
    return RegisterRef{RegisterClass::General, index, c};
  }
  static RegisterRef quad(std::uint32_t index, Component c) { return general(index, c); }
  static RegisterRef special(SpecialRegister s) {
    return RegisterRef{RegisterClass::Special, static_cast<std::uint32_t>(s), std::nullopt};
  }
  /// The general register occupying flat cell `cell` under `model`.
  static RegisterRef from_cell(std::uint32_t cell, RegisterModel model) {
    if (model == RegisterModel::Quad) return quad(cell / 4, static_cast<Component>(cell % 4));
    return general(cell);
  }

  bool is_general() const { return cls == RegisterClass::General; }
  bool is_special() const { return cls == RegisterClass::Special; }

  /// Flat 32-bit cell index inside a thread's register window.
  std::uint32_t cell() const {
    return component ? index * 4 + static_cast<std::uint32_t>(*component) : index;
  }

  auto operator<=>(const RegisterRef&) const = default;
};

std::string to_string(const RegisterRef& r);
/// Parses `r7`, `r51.w`, `tid`, ...; throws IsaError otherwise.
RegisterRef parse_register_name(std::string_view text);

struct Immediate {
  std::uint32_t bits = 0;
  auto operator<=>(const Immediate&) const = default;
};

using Operand = std::variant<RegisterRef, Immediate>;

/// `[bN+offset]`; offset is a word index.
struct MemoryRef {
  std::uint32_t buffer = 0;
  Operand offset = Immediate{0};
  bool operator==(const MemoryRef&) const = default;
};

enum class Opcode : std::uint8_t {
  MovImm,
  MovReg,
  IAdd,
  IShl,
  FAdd,
  GetThreadId,
  GetGroupId,
  LoadGlobal,
  StoreGlobal,
  StoreTile,
  Nop,
  Exit,
};

std::string_view mnemonic(Opcode op);

struct Instruction {
  Opcode op = Opcode::Nop;
  std::optional<RegisterRef> dst;
  std::vector<Operand> srcs;
  std::optional<MemoryRef> mem;

  bool operator==(const Instruction&) const = default;
};

struct Program {
  std::string name;
  RegisterModel model = RegisterModel::Scalar;
  /// Register cells this shader claims per thread.
  std::uint32_t declared_registers = 0;
  std::vector<Instruction> instructions;

  bool operator==(const Program&) const = default;
};

class IsaError : public std::runtime_error {
 public:
  IsaError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  /// 1-based source line, 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ParseOptions {
  /// Per-thread register cells of the target configuration.
  std::uint32_t max_cells = 256;
};

Program parse_program(std::string_view text, const ParseOptions& options = {});
std::string render_program(const Program& p);

/// Throws IsaError when `p` breaks a Program/Instruction/RegisterRef invariant.
void validate(const Program& p, std::uint32_t max_cells = 256);

/// Registers an instruction reads, in evaluation order (sources, then address).
std::vector<RegisterRef> reads_of(const Instruction& inst);

struct UninitializedRead {
  std::size_t instruction = 0;
  RegisterRef reg;
  bool operator==(const UninitializedRead&) const = default;
};

/// Every (site, general register) read before any write on the straight-line path.
/// Reads of an instruction are evaluated before its own definition.
std::vector<UninitializedRead> uninitialized_reads(const Program& p,
                                                   const std::set<RegisterRef>& predefined = {});

std::set<RegisterRef> read_set_before_write(const Program& p,
                                            const std::set<RegisterRef>& predefined = {});

/// General registers defined anywhere in `p`, in ascending order.
std::set<RegisterRef> write_set(const Program& p);

}  // namespace stalereg::isa
