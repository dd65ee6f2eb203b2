#include <benchmark/benchmark.h>

#include <filesystem>
#include <numeric>

#include "stalereg/cnn.hpp"
#include "stalereg/covert.hpp"
#include "stalereg/image.hpp"
#include "stalereg/isa.hpp"
#include "stalereg/jigsaw.hpp"
#include "stalereg/llm.hpp"
#include "stalereg/pixel.hpp"
#include "stalereg/rng.hpp"
#include "stalereg/sanitize.hpp"

namespace {

using namespace stalereg;

void BM_InterpretedDispatch(benchmark::State& state) {
  const auto groups = static_cast<std::uint32_t>(state.range(0));
  sim::Simulator s(sim::profile("agx"));
  const auto p = isa::parse_program("get_tid r0\niadd r1, r0, 3\nishl r2, r1, 2\nst_global [b0+tid], r2\nexit");
  const auto d = sim::Dispatch::of(p, groups, 256, {{0, s.create_buffer(std::size_t{groups} * 256)}});
  for (auto _ : state) benchmark::DoNotOptimize(s.dispatch(d));
  state.SetItemsProcessed(state.iterations() * groups * 256);
}
BENCHMARK(BM_InterpretedDispatch)->Arg(8)->Arg(64);

void BM_CovertTransmit(benchmark::State& state) {
  Rng rng(1);
  std::vector<std::uint8_t> msg(10 * 1024);
  for (auto& b : msg) b = static_cast<std::uint8_t>(rng.next_u32());
  sim::Simulator s(sim::profile("nvidia"));
  for (auto _ : state) benchmark::DoNotOptimize(covert::transmit(s, msg));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(msg.size()));
}
BENCHMARK(BM_CovertTransmit)->Unit(benchmark::kMillisecond);

void BM_JigsawSolve(benchmark::State& state) {
  const auto img = read_pgm(std::filesystem::path(STALEREG_DATA_DIR) / "test128.pgm");
  std::vector<jigsaw::Piece> pieces;
  for (const auto& t : pixel::split_tiles(img, 16)) pieces.push_back({t.size, t.values});
  Rng rng(2);
  rng.shuffle(std::span<jigsaw::Piece>(pieces));
  jigsaw::GaParams ga;
  ga.generations = static_cast<std::uint32_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(jigsaw::solve(pieces, 8, 8, ga));
}
BENCHMARK(BM_JigsawSolve)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_AdrenoCnnAttack(benchmark::State& state) {
  const auto m = cnn::make_model(1);
  const auto img = cnn::make_input(1);
  for (auto _ : state) benchmark::DoNotOptimize(cnn::attack_adreno(sim::profile("adreno"), m, img));
}
BENCHMARK(BM_AdrenoCnnAttack)->Unit(benchmark::kMillisecond);

void BM_ReconstructOverlap(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<cnn::LeakSegment> segs(n);
  for (auto& s : segs) {
    for (auto& v : s.values) v = static_cast<float>(rng.uniform01());
  }
  for (auto _ : state) benchmark::DoNotOptimize(cnn::reconstruct_overlap(segs));
}
BENCHMARK(BM_ReconstructOverlap)->Arg(8)->Arg(144);

void BM_LutBuild(benchmark::State& state) {
  const auto t = llm::make_tables(1000, 64, 32, 4);
  for (auto _ : state) benchmark::DoNotOptimize(llm::build_lut(t, 30));
  state.SetItemsProcessed(state.iterations() * 1000 * 64 * 30);
}
BENCHMARK(BM_LutBuild)->Unit(benchmark::kMillisecond);

void BM_LutReconstruct(benchmark::State& state) {
  const auto t = llm::make_tables(1000, 64, 32, 4);
  const auto lut = llm::build_lut(t, 30);
  std::vector<std::uint32_t> ids(20);
  std::iota(ids.begin(), ids.end(), 100u);
  const auto leaked = llm::leak_embeddings(sim::profile("nvidia"), t, ids);
  for (auto _ : state) benchmark::DoNotOptimize(llm::reconstruct(leaked, lut));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(leaked.size()));
}
BENCHMARK(BM_LutReconstruct)->Unit(benchmark::kMillisecond);

void BM_Analyze(benchmark::State& state) {
  std::string src = ".regs 64\n";
  for (int i = 0; i < 64; ++i) src += "iadd r" + std::to_string(i) + ", r" + std::to_string((i + 1) % 64) + ", 1\n";
  src += "exit\n";
  const auto p = isa::parse_program(src);
  for (auto _ : state) benchmark::DoNotOptimize(sanitize::analyze(p));
}
BENCHMARK(BM_Analyze);

}  // namespace

BENCHMARK_MAIN();
