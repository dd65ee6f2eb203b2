#include "stalereg/isa.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "random_program.hpp"
#include "stalereg/cnn.hpp"
#include "stalereg/pixel.hpp"

namespace stalereg::isa {
namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::filesystem::path(STALEREG_KERNELS_DIR) / name);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Parse, AlphaConstant) {
  const auto p = parse_program("mov_imm r3, 0x3f800000 \n exit");
  ASSERT_EQ(p.instructions.size(), 2u);
  EXPECT_EQ(p.instructions[0].op, Opcode::MovImm);
  EXPECT_EQ(p.instructions[0].dst, RegisterRef::general(3));
  EXPECT_EQ(std::get<Immediate>(p.instructions[0].srcs[0]).bits, 0x3f800000u);
  EXPECT_EQ(p.instructions[1].op, Opcode::Exit);
  EXPECT_EQ(p.declared_registers, 4u);
}

TEST(Parse, StaleStore) {
  const auto p = parse_program("st_global [b0+tid], r8 \n exit");
  ASSERT_EQ(p.instructions.size(), 2u);
  const auto& st = p.instructions[0];
  EXPECT_EQ(st.op, Opcode::StoreGlobal);
  EXPECT_EQ(std::get<RegisterRef>(st.srcs[0]), RegisterRef::general(8));
  ASSERT_TRUE(st.mem);
  EXPECT_EQ(st.mem->buffer, 0u);
  EXPECT_EQ(std::get<RegisterRef>(st.mem->offset), RegisterRef::special(SpecialRegister::ThreadId));
}

TEST(Parse, ExitAlone) {
  const auto p = parse_program("exit");
  ASSERT_EQ(p.instructions.size(), 1u);
  EXPECT_EQ(p.declared_registers, 0u);
}

TEST(Parse, QuadDefaultWindowCoversWholeRegisters) {
  const auto p = parse_program(".model quad\nmov_imm r2.y, 1\nexit");
  EXPECT_EQ(p.declared_registers, 12u);
}

TEST(Parse, ErrorsCarryLineNumbers) {
  try {
    parse_program("nop\n\nfrobnicate r1\nexit");
    FAIL() << "expected IsaError";
  } catch (const IsaError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse_program("mov_imm r300, 1\nexit");
    FAIL() << "expected IsaError";
  } catch (const IsaError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Parse, Rejections) {
  EXPECT_THROW(parse_program(""), IsaError);
  EXPECT_THROW(parse_program("nop"), IsaError);                     // no exit
  EXPECT_THROW(parse_program("exit\nnop\nexit"), IsaError);         // exit before end
  EXPECT_THROW(parse_program("exit 1"), IsaError);                  // operands on exit
  EXPECT_THROW(parse_program("mov_imm tid, 1\nexit"), IsaError);    // special is read-only
  EXPECT_THROW(parse_program("mov_imm r1.x, 1\nexit"), IsaError);   // subregister in scalar
  EXPECT_THROW(parse_program(".model quad\nmov_imm r1, 1\nexit"), IsaError);
  EXPECT_THROW(parse_program("mov_imm r9, 1\nexit", {8}), IsaError);  // beyond target file
  EXPECT_THROW(parse_program(".regs 4\nmov_imm r5, 1\nexit"), IsaError);
  EXPECT_THROW(parse_program("ld_global r1, [x0+tid]\nexit"), IsaError);
}

TEST(ParseRegisterName, Forms) {
  EXPECT_EQ(parse_register_name("r51.w"), RegisterRef::quad(51, Component::W));
  EXPECT_EQ(parse_register_name("r7"), RegisterRef::general(7));
  EXPECT_EQ(parse_register_name("gid"), RegisterRef::special(SpecialRegister::GroupId));
  EXPECT_THROW(parse_register_name("q1"), IsaError);
}

TEST(Render, EmptyProgramIsAnError) { EXPECT_THROW(render_program(Program{}), IsaError); }

TEST(Fixtures, MatchBuiltInKernels) {
  EXPECT_EQ(parse_program(fixture("attacker_nvidia.asm")), cnn::attacker_nvidia());
  EXPECT_EQ(parse_program(fixture("attacker_adreno.asm")), cnn::attacker_adreno());
  EXPECT_EQ(parse_program(fixture("fragment_agx.asm")), pixel::fragment_shader());
}

TEST(Fixtures, RoundTrip) {
  for (const char* name :
       {"attacker_adreno.asm", "attacker_agx.asm", "attacker_nvidia.asm", "fragment_agx.asm"}) {
    const auto p = parse_program(fixture(name));
    EXPECT_EQ(parse_program(render_program(p)), p) << name;
  }
}

TEST(ReadSetBeforeWrite, AttackerKernels) {
  EXPECT_EQ(read_set_before_write(parse_program(fixture("attacker_nvidia.asm"))),
            std::set<RegisterRef>{RegisterRef::general(8)});
  EXPECT_EQ(read_set_before_write(parse_program(fixture("attacker_adreno.asm"))),
            std::set<RegisterRef>{RegisterRef::quad(2, Component::X)});
  EXPECT_EQ(read_set_before_write(parse_program(fixture("attacker_agx.asm"))),
            std::set<RegisterRef>{RegisterRef::general(0)});
  EXPECT_TRUE(read_set_before_write(parse_program(fixture("fragment_agx.asm"))).empty());
}

TEST(ReadSetBeforeWrite, DefinedBeforeUse) {
  EXPECT_TRUE(read_set_before_write(parse_program("mov_imm r0, 5\nst_global [b0+tid], r0\nexit")).empty());
}

TEST(ReadSetBeforeWrite, ReadPrecedesOwnDefinition) {
  EXPECT_EQ(read_set_before_write(parse_program("iadd r1, r1, 1\nexit")),
            std::set<RegisterRef>{RegisterRef::general(1)});
}

TEST(ReadSetBeforeWrite, AddressRegisterCounts) {
  EXPECT_EQ(read_set_before_write(parse_program("ld_global r0, [b0+r4]\nexit")),
            std::set<RegisterRef>{RegisterRef::general(4)});
}

TEST(ReadSetBeforeWrite, PredefinedRegistersAreInitialized) {
  const auto p = parse_program(".model quad\nmov r0.x, r51.w\nexit");
  EXPECT_TRUE(read_set_before_write(p, {RegisterRef::quad(51, Component::W)}).empty());
}

TEST(Property, RoundTripOverRandomPrograms) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    testing::RandomProgramOptions o;
    o.model = i % 2 ? RegisterModel::Quad : RegisterModel::Scalar;
    o.length = 1 + static_cast<std::uint32_t>(rng.below(24));
    const auto p = testing::random_program(rng, o);
    ASSERT_NO_THROW(validate(p));
    ASSERT_EQ(parse_program(render_program(p)), p) << render_program(p);
  }
}

// Per-cell written bits, evaluated instruction by instruction.
std::set<RegisterRef> brute_force_reads(const Program& p) {
  std::map<std::uint32_t, bool> written;
  std::set<RegisterRef> out;
  auto visit = [&](const Operand& o) {
    if (const auto* r = std::get_if<RegisterRef>(&o); r && r->is_general() && !written[r->cell()]) {
      out.insert(*r);
    }
  };
  for (const auto& in : p.instructions) {
    for (const auto& s : in.srcs) visit(s);
    if (in.mem) visit(in.mem->offset);
    if (in.dst) written[in.dst->cell()] = true;
  }
  return out;
}

TEST(Property, ReadSetMatchesBruteForce) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    testing::RandomProgramOptions o;
    o.model = i % 3 == 0 ? RegisterModel::Quad : RegisterModel::Scalar;
    o.length = static_cast<std::uint32_t>(rng.below(20));
    const auto p = testing::random_program(rng, o);
    ASSERT_EQ(read_set_before_write(p), brute_force_reads(p)) << render_program(p);
  }
}

}  // namespace
}  // namespace stalereg::isa
