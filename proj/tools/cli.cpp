#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stalereg/cnn.hpp"
#include "stalereg/covert.hpp"
#include "stalereg/image.hpp"
#include "stalereg/isa.hpp"
#include "stalereg/jigsaw.hpp"
#include "stalereg/llm.hpp"
#include "stalereg/pixel.hpp"
#include "stalereg/rng.hpp"
#include "stalereg/sanitize.hpp"
#include "stalereg/sim.hpp"

#ifndef STALEREG_VERSION
#define STALEREG_VERSION "0.0.0"
#endif

namespace stalereg::cli {

namespace fs = std::filesystem;

namespace {

/// Thrown for invalid input; maps to kUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Output files staged in memory and published together; nothing is written
/// unless every artifact was produced.
class Artifacts {
 public:
  void add(fs::path path, std::string bytes) { files_.emplace_back(std::move(path), std::move(bytes)); }

  void commit() const {
    std::vector<fs::path> staged;
    try {
      for (const auto& [path, bytes] : files_) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        auto tmp = path;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        if (!out) throw std::runtime_error("cannot write " + path.string());
        staged.push_back(tmp);
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& t : staged) fs::remove(t, ec);
      throw;
    }
    for (std::size_t i = 0; i < files_.size(); ++i) fs::rename(staged[i], files_[i].first);
  }

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

struct ConfigOptions {
  std::string profile;
  std::string config_file;
  std::optional<std::uint64_t> seed;
  bool jitter = false;
};

void add_config_options(CLI::App& app, ConfigOptions& o, const std::string& default_profile) {
  o.profile = default_profile;
  app.add_option("--profile", o.profile, "GPU profile: adreno, agx or nvidia")->capture_default_str();
  app.add_option("--config", o.config_file, "key = value GPU config file (overrides --profile)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "simulator seed");
  app.add_flag("--jitter", o.jitter, "shuffle per-core group order");
}

sim::GpuConfig resolve(const ConfigOptions& o) {
  sim::GpuConfig cfg = o.config_file.empty() ? sim::profile(o.profile) : sim::parse_config(slurp(o.config_file));
  if (o.seed) cfg.seed = *o.seed;
  if (o.jitter) cfg.jitter = true;
  cfg.validate();
  return cfg;
}

std::string manifest(const std::string& subcommand, const std::vector<std::string>& args,
                     std::uint64_t seed, const std::optional<sim::GpuConfig>& cfg) {
  std::ostringstream m;
  m << "tool = stalereg " << STALEREG_VERSION << '\n' << "subcommand = " << subcommand << '\n' << "args =";
  for (std::size_t i = 1; i < args.size(); ++i) m << ' ' << args[i];
  m << '\n' << "seed = " << seed << '\n';
  if (cfg) m << "\n[gpu]\n" << sim::render_config(*cfg);
  return m.str();
}

fs::path manifest_path(const fs::path& next_to, const std::string& subcommand) {
  return next_to.parent_path() / (subcommand + ".manifest.txt");
}

std::string pgm_bytes(const GrayImage& img) {
  std::ostringstream s;
  write_pgm(s, img);
  return s.str();
}

std::string fixed6(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

isa::Program load_program(const fs::path& path, const sim::GpuConfig& cfg) {
  isa::ParseOptions po;
  po.max_cells = cfg.regs_per_thread;
  try {
    return isa::parse_program(slurp(path), po);
  } catch (const isa::IsaError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::map<std::uint32_t, sim::BufferId> bind_all(sim::Simulator& s, const isa::Program& p,
                                                std::size_t words, Rng* fill) {
  std::map<std::uint32_t, sim::BufferId> out;
  for (const auto& inst : p.instructions) {
    if (!inst.mem || out.count(inst.mem->buffer)) continue;
    std::vector<std::uint32_t> init(words, 0);
    if (fill) {
      for (auto& w : init) w = fill->next_u32();
    }
    out[inst.mem->buffer] = s.upload(init);
  }
  return out;
}

// ---------------------------------------------------------------- sim-run

struct SimRunArgs {
  ConfigOptions cfg;
  std::string victim;
  std::string attacker;
  std::uint32_t groups = 8;
  std::uint32_t group_size = 64;
  bool concurrent = false;
  std::string out = "sim-run";
};

int sim_run(const SimRunArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const auto cfg = resolve(a.cfg);
  sim::Simulator s(cfg);
  Rng fill(mix_seed(cfg.seed, 0x51));

  sim::Dispatch victim;
  if (a.victim.empty()) {
    victim = pixel::noise_victim(s, a.groups, a.group_size, cfg.seed);
  } else {
    auto p = load_program(a.victim, cfg);
    const auto bind = bind_all(s, p, std::size_t{a.groups} * a.group_size * 4 + 64, &fill);
    victim = sim::Dispatch::of(std::move(p), a.groups, a.group_size, bind);
  }
  auto attacker_program =
      a.attacker.empty() ? pixel::fragment_attacker(cfg.register_model) : load_program(a.attacker, cfg);
  const auto bind = bind_all(s, attacker_program, std::size_t{a.groups} * a.group_size * 4 + 64, nullptr);
  const auto attacker = sim::Dispatch::of(std::move(attacker_program), a.groups, a.group_size, bind);

  std::vector<sim::ExecutionReport> reports;
  if (a.concurrent) {
    const std::array<sim::Dispatch, 2> pair{victim, attacker};
    reports = s.dispatch_concurrent(pair);
  } else {
    reports.push_back(s.dispatch(victim));
    reports.push_back(s.dispatch(attacker));
  }

  std::ostringstream csv;
  sim::write_leaks_csv(csv, reports[1].leaks);
  const fs::path dir(a.out);
  Artifacts art;
  art.add(dir / "leaks.csv", csv.str());
  art.add(dir / "sim-run.manifest.txt", manifest("sim-run", args, cfg.seed, cfg));
  art.commit();
  out << "attacker uninitialized reads: " << reports[1].leaks.size() << '\n'
      << "wrote " << (dir / "leaks.csv").string() << '\n';
  return kOk;
}

// ----------------------------------------------------------- covert-bench

struct CovertArgs {
  ConfigOptions cfg;
  std::vector<std::uint32_t> grid{2, 4, 8, 16, 32};
  std::size_t frames = 96;
  std::uint32_t overhead = 4;
  std::string out = ".";
};

int covert_bench(const CovertArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const auto cfg = resolve(a.cfg);
  covert::SweepOptions so;
  so.sender_groups = a.grid;
  so.receiver_groups = a.grid;
  so.message_frames = a.frames;
  so.launch_overhead = a.overhead;
  const auto cells = covert::sweep(cfg, so);

  std::ostringstream csv;
  covert::write_sweep_csv(csv, cells);
  const fs::path dir(a.out);
  Artifacts art;
  art.add(dir / "sweep.csv", csv.str());
  art.add(dir / "covert-bench.manifest.txt", manifest("covert-bench", args, cfg.seed, cfg));
  art.commit();

  const auto best = std::max_element(cells.begin(), cells.end(), [](const auto& x, const auto& y) {
    return x.bytes_per_dispatch < y.bytes_per_dispatch;
  });
  if (best != cells.end()) {
    out << "best: sender_groups=" << best->sender_groups << " receiver_groups=" << best->receiver_groups
        << " bytes_per_dispatch=" << fixed6(best->bytes_per_dispatch) << '\n';
  }
  out << "wrote " << (dir / "sweep.csv").string() << '\n';
  return kOk;
}

// ----------------------------------------------------------- pixel-attack

struct PixelArgs {
  ConfigOptions cfg;
  std::string image;
  std::uint32_t tile = 16;
  std::string out = "recon.pgm";
  std::uint32_t population = 300;
  std::uint32_t generations = 100;
};

int pixel_attack(const PixelArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const auto cfg = resolve(a.cfg);
  const auto img = a.image.empty() ? quantize8(make_plasma(128, 1)) : read_pgm(fs::path(a.image));
  jigsaw::GaParams ga;
  ga.population = a.population;
  ga.generations = a.generations;
  ga.seed = cfg.seed;
  const auto res = pixel::attack(cfg, img, a.tile, ga);

  // Tile i of the render is group i; groups index the true placement.
  std::vector<std::size_t> truth(res.tiles.size(), 0);
  bool known = true;
  for (std::size_t i = 0; i < res.tiles.size(); ++i) {
    if (res.tiles[i].group >= truth.size()) {
      known = false;
      break;
    }
    truth[res.tiles[i].group] = i;
  }

  const fs::path path(a.out);
  Artifacts art;
  art.add(path, pgm_bytes(quantize8(res.reconstruction)));
  art.add(manifest_path(path, "pixel-attack"), manifest("pixel-attack", args, cfg.seed, cfg));
  art.commit();

  out << "quads: " << res.quads << "\nfragments: " << res.fragments << "\ntiles: " << res.tiles.size()
      << " (" << res.grid_w << 'x' << res.grid_h << ")\nfitness: " << fixed6(res.solution.fitness) << '\n';
  if (known) {
    out << "neighbor accuracy: "
        << fixed6(jigsaw::neighbor_accuracy(res.solution.arrangement, truth, res.grid_w, res.grid_h))
        << '\n';
  }
  out << "wrote " << path.string() << '\n';
  return kOk;
}

// ------------------------------------------------------------- cnn-attack

struct CnnArgs {
  std::string model = "nvidia";
  std::string config_file;
  std::string image;
  std::string out = "leaked.pgm";
  std::string csv = "coverage.csv";
  std::uint64_t seed = 1;
};

/// 8 filter maps in a 4x2 grid; leaked values normalized per filter,
/// everything else black.
GrayImage render_leak(std::span<const float> values, std::span<const std::uint8_t> mask) {
  constexpr std::uint32_t cols = 4;
  const std::uint32_t side = cnn::kConvSide;
  GrayImage img(cols * side, (cnn::kFilters / cols) * side);
  for (std::uint32_t f = 0; f < cnn::kFilters; ++f) {
    float lo = 0.0f, hi = 0.0f;
    bool any = false;
    for (std::uint32_t i = 0; i < cnn::kConvSize; ++i) {
      const auto k = f * cnn::kConvSize + i;
      if (!mask[k]) continue;
      lo = any ? std::min(lo, values[k]) : values[k];
      hi = any ? std::max(hi, values[k]) : values[k];
      any = true;
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    for (std::uint32_t i = 0; i < cnn::kConvSize; ++i) {
      const auto k = f * cnn::kConvSize + i;
      const auto x = (f % cols) * side + i % side, y = (f / cols) * side + i / side;
      img.at(x, y) = mask[k] ? (values[k] - lo) / span : 0.0f;
    }
  }
  return img;
}

std::uint32_t longest_ones(std::span<const std::uint8_t> m) {
  std::uint32_t best = 0, cur = 0;
  for (auto v : m) {
    cur = v ? cur + 1 : 0;
    best = std::max(best, cur);
  }
  return best;
}

int cnn_attack(const CnnArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  if (a.model != "nvidia" && a.model != "adreno") throw UsageError("--model must be nvidia or adreno");
  auto cfg = a.config_file.empty() ? sim::profile(a.model) : sim::parse_config(slurp(a.config_file));
  cfg.validate();
  const auto model = cnn::make_model(a.seed);
  GrayImage input = cnn::make_input(a.seed);
  if (!a.image.empty()) {
    input = read_pgm(fs::path(a.image));
    if (input.width != cnn::kInput || input.height != cnn::kInput) {
      throw UsageError("input image must be 28x28");
    }
  }

  std::vector<float> values(cnn::kFilters * cnn::kConvSize, 0.0f);
  std::vector<std::uint8_t> mask(values.size(), 0);
  if (a.model == "nvidia") {
    const auto leak = cnn::attack_nvidia(cfg, model, input);
    mask = leak.mask;
    for (const auto& s : leak.segments) {
      std::copy(s.values.begin(), s.values.end(), values.begin() + s.position);
    }
    out << "mask density: " << fixed6(leak.density) << '\n';
  } else {
    const auto leak = cnn::attack_adreno(cfg, model, input);
    for (const auto& r : leak.runs) {
      for (std::uint32_t i = 0; i < r.length; ++i) {
        const auto k = r.filter * cnn::kConvSize + r.position + i;
        values[k] = leak.stream[r.stream_offset + i];
        mask[k] = 1;
      }
    }
    out << "prefix bytes: " << leak.prefix_bytes << "\nbest filter: " << leak.best_filter
        << "\ncoverage: " << fixed6(leak.coverage) << "\nlongest run: " << leak.longest_run << '\n';
  }

  std::ostringstream csv;
  csv << "model,filter,mask_density,longest_run\n";
  for (std::uint32_t f = 0; f < cnn::kFilters; ++f) {
    const std::span<const std::uint8_t> m(mask.data() + f * cnn::kConvSize, cnn::kConvSize);
    const auto ones = std::count(m.begin(), m.end(), std::uint8_t{1});
    csv << a.model << ',' << f << ',' << fixed6(static_cast<double>(ones) / cnn::kConvSize) << ','
        << longest_ones(m) << '\n';
  }

  const fs::path img_path(a.out), csv_path(a.csv);
  Artifacts art;
  art.add(img_path, pgm_bytes(quantize8(render_leak(values, mask))));
  art.add(csv_path, csv.str());
  art.add(manifest_path(img_path, "cnn-attack"), manifest("cnn-attack", args, a.seed, cfg));
  art.commit();
  out << "wrote " << img_path.string() << ", " << csv_path.string() << '\n';
  return kOk;
}

// ------------------------------------------------------------- llm-attack

struct LlmArgs {
  ConfigOptions cfg;
  std::string tables;
  std::string leak;
  std::uint32_t max_pos = 30;
  std::uint32_t tokens = 20;
  bool sliding = false;
  std::string out = "tokens.csv";
};

int llm_attack(const LlmArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const auto cfg = resolve(a.cfg);
  const auto tables = a.tables.empty() ? llm::make_tables(1000, 64, 32, cfg.seed) : llm::read_tables(a.tables);
  if (a.max_pos > tables.positions) throw UsageError("--max-pos exceeds the position table");

  std::vector<float> leaked;
  if (a.leak.empty()) {
    if (a.tokens == 0 || a.tokens > tables.positions) throw UsageError("--tokens out of range");
    Rng rng(mix_seed(cfg.seed, 0x70c));
    std::vector<std::uint32_t> ids(a.tokens);
    for (auto& id : ids) id = static_cast<std::uint32_t>(rng.below(tables.vocab));
    leaked = llm::leak_embeddings(cfg, tables, ids);
    out << "victim tokens:";
    for (auto id : ids) out << ' ' << id;
    out << '\n';
  } else {
    leaked = llm::read_floats(a.leak);
  }

  const auto lut = llm::build_lut(tables, a.max_pos);
  llm::ReconstructOptions ro;
  if (a.sliding) ro.stride = 1;
  const auto found = llm::reconstruct(leaked, lut, ro);

  std::ostringstream csv;
  llm::write_tokens_csv(csv, found);
  const fs::path path(a.out);
  Artifacts art;
  art.add(path, csv.str());
  art.add(manifest_path(path, "llm-attack"), manifest("llm-attack", args, cfg.seed, cfg));
  art.commit();
  out << "leaked values: " << leaked.size() << "\nreconstructed chunks: " << found.size() << '\n'
      << "wrote " << path.string() << '\n';
  return kOk;
}

// --------------------------------------------------------------- sanitize

struct SanitizeArgs {
  std::string file;
  std::vector<std::string> abi;
  std::string out;
  bool full = false;
};

isa::Program load_asm(const std::string& file) {
  try {
    return isa::parse_program(slurp(file));
  } catch (const isa::IsaError& e) {
    throw UsageError(file + ": " + e.what());
  }
}

int sanitize_check(const SanitizeArgs& a, std::ostream& out) {
  const auto p = load_asm(a.file);
  sanitize::AnalyzerOptions opts;
  for (const auto& name : a.abi) {
    try {
      opts.abi_registers.insert(isa::parse_register_name(name));
    } catch (const isa::IsaError& e) {
      throw UsageError(std::string("--abi: ") + e.what());
    }
  }
  const auto v = sanitize::analyze(p, opts);
  for (const auto& x : v.violations) {
    out << a.file << ": instruction " << x.instruction << " (" << isa::mnemonic(p.instructions[x.instruction].op)
        << ") reads " << isa::to_string(x.reg) << " before any write\n";
  }
  out << (v.decision == sanitize::Decision::Accept ? "ACCEPT" : "REJECT") << ' ' << p.name << '\n';
  return v.decision == sanitize::Decision::Accept ? kOk : kRejected;
}

int sanitize_rewrite(const SanitizeArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  if (a.out.empty()) throw UsageError("rewrite needs -o OUT");
  const auto p = load_asm(a.file);
  const auto clean = sanitize::rewrite_cleanup(
      p, a.full ? sanitize::CleanupMode::FullWindow : sanitize::CleanupMode::WrittenOnly);
  const fs::path path(a.out);
  Artifacts art;
  art.add(path, isa::render_program(clean));
  art.add(manifest_path(path, "sanitize"), manifest("sanitize", args, 0, std::nullopt));
  art.commit();
  out << "added " << clean.instructions.size() - p.instructions.size() << " cleanup instructions\n"
      << "wrote " << path.string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stale GPU register leakage experiments", "stalereg"};
  app.set_version_flag("--version", STALEREG_VERSION);
  app.require_subcommand(1);

  SimRunArgs sr;
  auto* c_sim = app.add_subcommand("sim-run", "run a victim then an attacker and dump uninitialized reads");
  add_config_options(*c_sim, sr.cfg, "agx");
  c_sim->add_option("--kernel", sr.victim, "victim .asm (default: fragment shader over noise)")
      ->check(CLI::ExistingFile);
  c_sim->add_option("--attacker", sr.attacker, "attacker .asm (default: fragment register dump)")
      ->check(CLI::ExistingFile);
  c_sim->add_option("--groups", sr.groups)->check(CLI::Range(1u, 4096u))->capture_default_str();
  c_sim->add_option("--group-size", sr.group_size)->check(CLI::Range(1u, 1024u))->capture_default_str();
  c_sim->add_flag("--concurrent", sr.concurrent, "interleave victim and attacker waves");
  c_sim->add_option("--out", sr.out, "output directory")->capture_default_str();

  CovertArgs cv;
  auto* c_cov = app.add_subcommand("covert-bench", "sender x receiver bandwidth sweep");
  add_config_options(*c_cov, cv.cfg, "agx");
  c_cov->add_option("--grid", cv.grid, "group counts for both axes")->delimiter(',')->capture_default_str();
  c_cov->add_option("--frames", cv.frames, "frames per message")->check(CLI::PositiveNumber);
  c_cov->add_option("--overhead", cv.overhead, "launch cost in group units");
  c_cov->add_option("--out", cv.out, "output directory")->capture_default_str();

  PixelArgs px;
  auto* c_px = app.add_subcommand("pixel-attack", "leak rendered tiles and reassemble the image");
  add_config_options(*c_px, px.cfg, "agx");
  c_px->add_option("--image", px.image, "input PGM (default: built-in 128x128 plasma)")
      ->check(CLI::ExistingFile);
  c_px->add_option("--tile", px.tile)->check(CLI::Range(2u, 32u))->capture_default_str();
  c_px->add_option("--out", px.out)->capture_default_str();
  c_px->add_option("--population", px.population)->check(CLI::Range(2u, 100000u));
  c_px->add_option("--generations", px.generations)->check(CLI::Range(1u, 100000u));

  CnnArgs cn;
  auto* c_cnn = app.add_subcommand("cnn-attack", "leak first-layer convolution outputs");
  c_cnn->add_option("--model", cn.model, "nvidia or adreno")->capture_default_str();
  c_cnn->add_option("--config", cn.config_file, "GPU config file (overrides the model profile)")
      ->check(CLI::ExistingFile);
  c_cnn->add_option("--image", cn.image, "28x28 input PGM (default: built-in)")->check(CLI::ExistingFile);
  c_cnn->add_option("--out", cn.out)->capture_default_str();
  c_cnn->add_option("--csv", cn.csv)->capture_default_str();
  c_cnn->add_option("--seed", cn.seed, "weight and input seed")->capture_default_str();

  LlmArgs lm;
  lm.cfg.profile = "nvidia";
  auto* c_llm = app.add_subcommand("llm-attack", "recover tokens from leaked embedding outputs");
  add_config_options(*c_llm, lm.cfg, "nvidia");
  c_llm->add_option("--tables", lm.tables, "embedding tables (default: seeded 1000x64x32)")
      ->check(CLI::ExistingFile);
  c_llm->add_option("--leak", lm.leak, "leaked float32 stream (default: simulate a victim)")
      ->check(CLI::ExistingFile);
  c_llm->add_option("--max-pos", lm.max_pos)->check(CLI::Range(1u, 1u << 20))->capture_default_str();
  c_llm->add_option("--tokens", lm.tokens, "victim length when simulating")->capture_default_str();
  c_llm->add_flag("--sliding", lm.sliding, "scan with stride 1");
  c_llm->add_option("--out", lm.out)->capture_default_str();

  SanitizeArgs sz;
  auto* c_san = app.add_subcommand("sanitize", "reject or clean shaders that read stale registers");
  c_san->require_subcommand(1);
  auto* c_check = c_san->add_subcommand("check", "exit 0 on accept, 1 on reject");
  c_check->add_option("file", sz.file)->required()->check(CLI::ExistingFile);
  c_check->add_option("--abi", sz.abi, "registers the runtime initializes, e.g. r51.w");
  auto* c_rw = c_san->add_subcommand("rewrite", "zero registers before exit");
  c_rw->add_option("file", sz.file)->required()->check(CLI::ExistingFile);
  c_rw->add_option("-o,--out", sz.out)->required();
  c_rw->add_flag("--full", sz.full, "zero the whole declared window");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_sim->parsed()) return sim_run(sr, args, out);
    if (c_cov->parsed()) return covert_bench(cv, args, out);
    if (c_px->parsed()) return pixel_attack(px, args, out);
    if (c_cnn->parsed()) return cnn_attack(cn, args, out);
    if (c_llm->parsed()) return llm_attack(lm, args, out);
    if (c_check->parsed()) return sanitize_check(sz, out);
    if (c_rw->parsed()) return sanitize_rewrite(sz, args, out);
  } catch (const sim::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ImageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  err << app.help();
  return kUsage;
}

}  // namespace stalereg::cli
