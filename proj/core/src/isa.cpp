#include "stalereg/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace stalereg::isa {
namespace {

struct OpInfo {
  Opcode op;
  std::string_view name;
};

constexpr std::array<OpInfo, 12> kOps{{
    {Opcode::MovImm, "mov_imm"},
    {Opcode::MovReg, "mov"},
    {Opcode::IAdd, "iadd"},
    {Opcode::IShl, "ishl"},
    {Opcode::FAdd, "fadd"},
    {Opcode::GetThreadId, "get_tid"},
    {Opcode::GetGroupId, "get_gid"},
    {Opcode::LoadGlobal, "ld_global"},
    {Opcode::StoreGlobal, "st_global"},
    {Opcode::StoreTile, "st_tile"},
    {Opcode::Nop, "nop"},
    {Opcode::Exit, "exit"},
}};

constexpr std::array<std::string_view, 4> kSpecialNames{"tid", "ltid", "gid", "lane"};
constexpr std::string_view kComponents = "xyzw";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string_view> split_operands(std::string_view s, std::size_t line) {
  std::vector<std::string_view> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '[') ++depth;
    if (s[i] == ']') --depth;
    if (s[i] == ',' && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (depth != 0) throw IsaError(line, "unbalanced brackets");
  auto last = trim(s.substr(start));
  if (!last.empty() || !out.empty()) out.push_back(last);
  for (auto o : out) {
    if (o.empty()) throw IsaError(line, "empty operand");
  }
  return out;
}

std::optional<std::uint32_t> parse_uint(std::string_view s) {
  if (s.empty()) return std::nullopt;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    base = 16;
  }
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || p != s.data() + s.size() || v > 0xffffffffULL) return std::nullopt;
  return static_cast<std::uint32_t>(v);
}

std::optional<Immediate> parse_immediate(std::string_view s) {
  bool neg = false;
  if (!s.empty() && s[0] == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  auto v = parse_uint(s);
  if (!v) return std::nullopt;
  if (neg) {
    if (*v > 0x80000000u) return std::nullopt;
    return Immediate{static_cast<std::uint32_t>(0u - *v)};
  }
  return Immediate{*v};
}

std::optional<RegisterRef> parse_register(std::string_view s, std::size_t line) {
  const std::string l = lower(s);
  for (std::size_t i = 0; i < kSpecialNames.size(); ++i) {
    if (l == kSpecialNames[i]) return RegisterRef::special(static_cast<SpecialRegister>(i));
  }
  if (l.size() < 2 || l[0] != 'r' || !std::isdigit(static_cast<unsigned char>(l[1]))) {
    return std::nullopt;
  }
  std::string_view body(l);
  body.remove_prefix(1);
  std::optional<Component> comp;
  if (auto dot = body.find('.'); dot != std::string_view::npos) {
    auto suffix = body.substr(dot + 1);
    body = body.substr(0, dot);
    if (suffix.size() != 1 || kComponents.find(suffix[0]) == std::string_view::npos) {
      throw IsaError(line, "bad subregister '" + std::string(s) + "'");
    }
    comp = static_cast<Component>(kComponents.find(suffix[0]));
  }
  std::uint32_t index = 0;
  auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), index);
  if (ec != std::errc{} || p != body.data() + body.size()) {
    throw IsaError(line, "bad register '" + std::string(s) + "'");
  }
  return RegisterRef::general(index, comp);
}

Operand parse_operand(std::string_view s, std::size_t line) {
  if (auto r = parse_register(s, line)) return *r;
  if (auto imm = parse_immediate(s)) return *imm;
  throw IsaError(line, "bad operand '" + std::string(s) + "'");
}

RegisterRef expect_register(std::string_view s, std::size_t line) {
  auto r = parse_register(s, line);
  if (!r) throw IsaError(line, "expected register, got '" + std::string(s) + "'");
  return *r;
}

MemoryRef parse_memory(std::string_view s, std::size_t line) {
  if (s.size() < 4 || s.front() != '[' || s.back() != ']') {
    throw IsaError(line, "expected memory operand [bN+offset], got '" + std::string(s) + "'");
  }
  auto inner = trim(s.substr(1, s.size() - 2));
  std::string_view handle = inner;
  std::string_view offset;
  if (auto plus = inner.find('+'); plus != std::string_view::npos) {
    handle = trim(inner.substr(0, plus));
    offset = trim(inner.substr(plus + 1));
  }
  if (handle.size() < 2 || (handle[0] != 'b' && handle[0] != 'B')) {
    throw IsaError(line, "bad buffer handle '" + std::string(handle) + "'");
  }
  auto h = parse_uint(handle.substr(1));
  if (!h) throw IsaError(line, "bad buffer handle '" + std::string(handle) + "'");
  MemoryRef m{*h, Immediate{0}};
  if (!offset.empty()) m.offset = parse_operand(offset, line);
  return m;
}

void check_arity(const std::vector<std::string_view>& ops, std::size_t n, std::string_view name,
                 std::size_t line) {
  if (ops.size() != n) {
    throw IsaError(line, std::string(name) + " expects " + std::to_string(n) + " operand(s), got " +
                             std::to_string(ops.size()));
  }
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::string operand_text(const Operand& o) {
  if (auto* r = std::get_if<RegisterRef>(&o)) return to_string(*r);
  return hex(std::get<Immediate>(o).bits);
}

std::string memory_text(const MemoryRef& m) {
  std::string s = "[b" + std::to_string(m.buffer);
  if (auto* imm = std::get_if<Immediate>(&m.offset); imm && imm->bits == 0) return s + "]";
  return s + "+" + operand_text(m.offset) + "]";
}

std::uint32_t highest_cell(const Program& p) {
  std::uint32_t top = 0;
  bool any = false;
  auto see = [&](const RegisterRef& r) {
    if (!r.is_general()) return;
    std::uint32_t last = r.component ? r.index * 4 + 3 : r.index;
    top = std::max(top, last);
    any = true;
  };
  for (const auto& inst : p.instructions) {
    if (inst.dst) see(*inst.dst);
    for (const auto& r : reads_of(inst)) see(r);
  }
  return any ? top + 1 : 0;
}

void check_register(const RegisterRef& r, const Program& p, std::uint32_t max_cells,
                    std::size_t line) {
  if (r.is_special()) {
    if (r.index >= kSpecialNames.size()) throw IsaError(line, "unknown special register");
    return;
  }
  if (p.model == RegisterModel::Quad && !r.component) {
    throw IsaError(line, "quad register model requires a subregister on " + to_string(r));
  }
  if (p.model == RegisterModel::Scalar && r.component) {
    throw IsaError(line, "subregister " + to_string(r) + " used in scalar register model");
  }
  std::uint32_t limit = std::min(max_cells, p.declared_registers);
  if (r.cell() >= limit) {
    throw IsaError(line, "register " + to_string(r) + " out of range (" + std::to_string(limit) +
                             " cells available)");
  }
}

}  // namespace

RegisterRef parse_register_name(std::string_view text) { return expect_register(text, 0); }

std::string to_string(const RegisterRef& r) {
  if (r.is_special()) {
    return r.index < kSpecialNames.size() ? std::string(kSpecialNames[r.index]) : "sr?";
  }
  std::string s = "r" + std::to_string(r.index);
  if (r.component) {
    s += '.';
    s += kComponents[static_cast<std::size_t>(*r.component)];
  }
  return s;
}

std::string_view mnemonic(Opcode op) {
  for (const auto& info : kOps) {
    if (info.op == op) return info.name;
  }
  return "?";
}

std::vector<RegisterRef> reads_of(const Instruction& inst) {
  std::vector<RegisterRef> out;
  for (const auto& s : inst.srcs) {
    if (auto* r = std::get_if<RegisterRef>(&s)) out.push_back(*r);
  }
  if (inst.mem) {
    if (auto* r = std::get_if<RegisterRef>(&inst.mem->offset)) out.push_back(*r);
  }
  return out;
}

void validate(const Program& p, std::uint32_t max_cells) {
  if (p.instructions.empty()) throw IsaError(0, "program has no instructions");
  if (p.instructions.back().op != Opcode::Exit) throw IsaError(0, "last instruction must be exit");
  if (p.declared_registers > max_cells) {
    throw IsaError(0, "program declares " + std::to_string(p.declared_registers) +
                          " register cells, target allows " + std::to_string(max_cells));
  }
  if (p.model == RegisterModel::Quad && p.declared_registers % 4 != 0) {
    throw IsaError(0, "quad register model needs a multiple of 4 declared cells");
  }
  for (std::size_t i = 0; i < p.instructions.size(); ++i) {
    const auto& inst = p.instructions[i];
    const std::size_t line = 0;
    const auto where = " (instruction " + std::to_string(i) + ")";
    if (inst.op == Opcode::Exit && i + 1 != p.instructions.size()) {
      throw IsaError(line, "exit before end of program" + where);
    }
    const bool needs_dst = inst.op == Opcode::MovImm || inst.op == Opcode::MovReg ||
                           inst.op == Opcode::IAdd || inst.op == Opcode::IShl ||
                           inst.op == Opcode::FAdd || inst.op == Opcode::GetThreadId ||
                           inst.op == Opcode::GetGroupId || inst.op == Opcode::LoadGlobal;
    if (needs_dst != inst.dst.has_value()) throw IsaError(line, "bad destination" + where);
    if (inst.dst) {
      if (inst.dst->is_special()) throw IsaError(line, "special registers are read-only" + where);
      check_register(*inst.dst, p, max_cells, line);
    }
    const bool memory_op = inst.op == Opcode::LoadGlobal || inst.op == Opcode::StoreGlobal ||
                           inst.op == Opcode::StoreTile;
    if (memory_op != inst.mem.has_value()) throw IsaError(line, "bad memory operand" + where);
    std::size_t want_srcs = 0;
    switch (inst.op) {
      case Opcode::MovImm:
      case Opcode::MovReg:
      case Opcode::StoreGlobal: want_srcs = 1; break;
      case Opcode::IAdd:
      case Opcode::IShl:
      case Opcode::FAdd: want_srcs = 2; break;
      case Opcode::StoreTile: want_srcs = 4; break;
      default: want_srcs = 0;
    }
    if (inst.srcs.size() != want_srcs) throw IsaError(line, "wrong operand count" + where);
    for (std::size_t k = 0; k < inst.srcs.size(); ++k) {
      const bool is_reg = std::holds_alternative<RegisterRef>(inst.srcs[k]);
      const bool must_be_imm = inst.op == Opcode::MovImm;
      const bool must_be_reg = inst.op == Opcode::MovReg || inst.op == Opcode::StoreGlobal ||
                               inst.op == Opcode::StoreTile ||
                               (k == 0 && (inst.op == Opcode::IAdd || inst.op == Opcode::IShl ||
                                           inst.op == Opcode::FAdd));
      if ((must_be_imm && is_reg) || (must_be_reg && !is_reg)) {
        throw IsaError(line, "bad operand kind" + where);
      }
    }
    for (const auto& r : reads_of(inst)) check_register(r, p, max_cells, line);
  }
}

Program parse_program(std::string_view text, const ParseOptions& options) {
  Program p;
  std::optional<std::uint32_t> declared;
  std::vector<std::size_t> lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto c = raw.find("//"); c != std::string_view::npos) raw = raw.substr(0, c);
    auto line = trim(raw);
    if (line.empty()) {
      if (nl == text.size()) break;
      continue;
    }
    auto space = line.find_first_of(" \t");
    auto head = lower(line.substr(0, space));
    auto rest = space == std::string_view::npos ? std::string_view{} : trim(line.substr(space));

    if (head == ".kernel") {
      p.name = std::string(rest);
    } else if (head == ".model") {
      auto m = lower(rest);
      if (m == "quad") p.model = RegisterModel::Quad;
      else if (m == "scalar") p.model = RegisterModel::Scalar;
      else throw IsaError(line_no, "unknown register model '" + m + "'");
    } else if (head == ".regs") {
      auto v = parse_uint(rest);
      if (!v) throw IsaError(line_no, "bad .regs value");
      declared = *v;
    } else {
      auto it = std::find_if(kOps.begin(), kOps.end(),
                             [&](const OpInfo& o) { return o.name == head; });
      if (it == kOps.end()) throw IsaError(line_no, "unknown opcode '" + head + "'");
      auto ops = split_operands(rest, line_no);
      Instruction inst;
      inst.op = it->op;
      switch (inst.op) {
        case Opcode::MovImm: {
          check_arity(ops, 2, head, line_no);
          inst.dst = expect_register(ops[0], line_no);
          auto imm = parse_immediate(ops[1]);
          if (!imm) throw IsaError(line_no, "bad immediate '" + std::string(ops[1]) + "'");
          inst.srcs.push_back(*imm);
          break;
        }
        case Opcode::MovReg:
          check_arity(ops, 2, head, line_no);
          inst.dst = expect_register(ops[0], line_no);
          inst.srcs.push_back(expect_register(ops[1], line_no));
          break;
        case Opcode::IAdd:
        case Opcode::IShl:
        case Opcode::FAdd:
          check_arity(ops, 3, head, line_no);
          inst.dst = expect_register(ops[0], line_no);
          inst.srcs.push_back(expect_register(ops[1], line_no));
          inst.srcs.push_back(parse_operand(ops[2], line_no));
          break;
        case Opcode::GetThreadId:
        case Opcode::GetGroupId:
          check_arity(ops, 1, head, line_no);
          inst.dst = expect_register(ops[0], line_no);
          break;
        case Opcode::LoadGlobal:
          check_arity(ops, 2, head, line_no);
          inst.dst = expect_register(ops[0], line_no);
          inst.mem = parse_memory(ops[1], line_no);
          break;
        case Opcode::StoreGlobal:
          check_arity(ops, 2, head, line_no);
          inst.mem = parse_memory(ops[0], line_no);
          inst.srcs.push_back(expect_register(ops[1], line_no));
          break;
        case Opcode::StoreTile:
          check_arity(ops, 5, head, line_no);
          inst.mem = parse_memory(ops[0], line_no);
          for (std::size_t k = 1; k < 5; ++k) inst.srcs.push_back(expect_register(ops[k], line_no));
          break;
        case Opcode::Nop:
        case Opcode::Exit:
          check_arity(ops, 0, head, line_no);
          break;
      }
      if (inst.dst && inst.dst->is_special()) {
        throw IsaError(line_no, "special register " + to_string(*inst.dst) + " is read-only");
      }
      p.instructions.push_back(std::move(inst));
      lines.push_back(line_no);
    }
    if (nl == text.size()) break;
  }

  if (p.instructions.empty()) throw IsaError(0, "program has no instructions");
  if (declared) {
    p.declared_registers = *declared;
  } else {
    p.declared_registers = highest_cell(p);
  }

  // Per-instruction checks; errors carry their source line.
  for (std::size_t i = 0; i < p.instructions.size(); ++i) {
    Program one = p;
    one.instructions = {p.instructions[i], Instruction{Opcode::Exit, {}, {}, {}}};
    if (p.instructions[i].op == Opcode::Exit) {
      if (i + 1 != p.instructions.size()) throw IsaError(lines[i], "exit before end of program");
      continue;
    }
    try {
      validate(one, options.max_cells);
    } catch (const IsaError& e) {
      throw IsaError(lines[i], e.what());
    }
  }
  validate(p, options.max_cells);
  return p;
}

std::string render_program(const Program& p) {
  if (p.instructions.empty()) throw IsaError(0, "cannot render a program with no instructions");
  std::ostringstream out;
  if (!p.name.empty()) out << ".kernel " << p.name << '\n';
  if (p.model == RegisterModel::Quad) out << ".model quad\n";
  out << ".regs " << p.declared_registers << '\n';
  for (const auto& inst : p.instructions) {
    out << mnemonic(inst.op);
    std::vector<std::string> parts;
    if (inst.mem && inst.op != Opcode::LoadGlobal) parts.push_back(memory_text(*inst.mem));
    if (inst.dst) parts.push_back(to_string(*inst.dst));
    if (inst.mem && inst.op == Opcode::LoadGlobal) parts.push_back(memory_text(*inst.mem));
    for (const auto& s : inst.srcs) parts.push_back(operand_text(s));
    for (std::size_t i = 0; i < parts.size(); ++i) out << (i ? ", " : " ") << parts[i];
    out << '\n';
  }
  return out.str();
}

std::vector<UninitializedRead> uninitialized_reads(const Program& p,
                                                   const std::set<RegisterRef>& predefined) {
  std::set<std::uint32_t> written;
  for (const auto& r : predefined) {
    if (r.is_general()) written.insert(r.cell());
  }
  std::vector<UninitializedRead> out;
  for (std::size_t i = 0; i < p.instructions.size(); ++i) {
    const auto& inst = p.instructions[i];
    for (const auto& r : reads_of(inst)) {
      if (!r.is_general() || written.count(r.cell())) continue;
      UninitializedRead u{i, r};
      if (std::find(out.begin(), out.end(), u) == out.end()) out.push_back(u);
    }
    if (inst.dst && inst.dst->is_general()) written.insert(inst.dst->cell());
  }
  return out;
}

std::set<RegisterRef> read_set_before_write(const Program& p,
                                            const std::set<RegisterRef>& predefined) {
  std::set<RegisterRef> out;
  for (const auto& u : uninitialized_reads(p, predefined)) out.insert(u.reg);
  return out;
}

std::set<RegisterRef> write_set(const Program& p) {
  std::set<RegisterRef> out;
  for (const auto& inst : p.instructions) {
    if (inst.dst && inst.dst->is_general()) out.insert(*inst.dst);
  }
  return out;
}

}  // namespace stalereg::isa
