#pragma once

// Deterministic model of GPU cores, SIMD units and their register files.
//
// Thread groups go to cores round-robin by group index. Within a dispatch
// each core hands its waves to its SIMD units in order (a per-dispatch,
// per-core wave counter modulo simd_per_core). A wave allocation resets the
// written-bits of the SIMD's register window; what an uninitialized read
// returns is decided by the lifecycle policy.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stalereg/isa.hpp"

namespace stalereg::sim {

enum class Lifecycle : std::uint8_t {
  NoClear,       ///< cells keep the previous shader's values
  StoreResidue,  ///< uninitialized reads return the last coalesced half-wave store
  ZeroOnAlloc,   ///< cells read 0 until written by the current shader
};

enum class RemapPolicy : std::uint8_t { Identity, SeededPermutation };

/// Order in which the two half-wave bus transactions of a coalesced store issue.
enum class HalfWaveOrder : std::uint8_t { LowerFirst, UpperFirst };

struct GpuConfig {
  std::string profile = "custom";
  std::uint32_t num_cores = 4;
  std::uint32_t simd_per_core = 2;
  std::uint32_t wave_width = 32;
  std::uint32_t regs_per_thread = 128;
  isa::RegisterModel register_model = isa::RegisterModel::Scalar;
  Lifecycle lifecycle = Lifecycle::NoClear;
  RemapPolicy remap = RemapPolicy::Identity;
  HalfWaveOrder half_wave_order = HalfWaveOrder::LowerFirst;
  /// Shuffle per-core group order of every dispatch (seeded).
  bool jitter = false;
  std::uint64_t seed = 1;

  std::uint32_t half_wave() const { return wave_width / 2; }
  std::uint32_t simd_units() const { return num_cores * simd_per_core; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  bool operator==(const GpuConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownProfile : public ConfigError {
 public:
  explicit UnknownProfile(const std::string& name);
};

/// Named vendor models: "adreno", "agx", "nvidia".
GpuConfig profile(std::string_view name);
std::vector<std::string> profile_names();

/// `key = value` lines, `#` comments. A `profile` key, when present, is
/// applied first and the remaining keys override it.
GpuConfig parse_config(std::string_view text);
std::string render_config(const GpuConfig& cfg);

std::string_view to_string(Lifecycle l);
std::string_view to_string(RemapPolicy r);
std::string_view to_string(HalfWaveOrder o);

/// Physical cell that architectural cell `arch_cell` occupies for a dispatch
/// claiming `window` cells. SeededPermutation is a bijection over the window.
std::uint32_t apply_remap(RemapPolicy policy, std::uint64_t seed, std::uint64_t dispatch_id,
                          std::uint32_t window, std::uint32_t arch_cell);
std::vector<std::uint32_t> remap_table(RemapPolicy policy, std::uint64_t seed,
                                       std::uint64_t dispatch_id, std::uint32_t window);

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using BufferId = std::uint32_t;

struct LeakRecord {
  std::uint64_t dispatch_id = 0;
  std::uint32_t core = 0;
  std::uint32_t simd = 0;
  std::uint32_t group = 0;
  /// Wave index within the thread group.
  std::uint32_t wave_index = 0;
  std::uint32_t lane = 0;
  isa::RegisterRef arch_register;
  std::uint32_t value = 0;
  bool was_uninitialized = true;

  bool operator==(const LeakRecord&) const = default;
};

/// `dispatch,core,simd,wave,lane,reg,value_hex,uninit`
void write_leaks_csv(std::ostream& out, std::span<const LeakRecord> leaks);

namespace detail {
struct WaveState;
}

/// Wave-wide view handed to native kernels. Every access goes through the
/// same register-file and memory paths as interpreted ISA programs.
class WaveContext {
 public:
  explicit WaveContext(detail::WaveState& state) : state_(&state) {}

  std::uint32_t active_lanes() const;
  std::uint32_t group() const;
  std::uint32_t wave() const;
  std::uint32_t group_size() const;
  std::uint32_t thread_id(std::uint32_t lane) const;
  std::uint32_t local_id(std::uint32_t lane) const;

  std::uint32_t read(const isa::RegisterRef& r, std::uint32_t lane);
  float read_float(const isa::RegisterRef& r, std::uint32_t lane);
  void write(const isa::RegisterRef& r, std::uint32_t lane, std::uint32_t value);
  void write_float(const isa::RegisterRef& r, std::uint32_t lane, float value);

  std::uint32_t load(std::uint32_t handle, std::size_t addr) const;
  float load_float(std::uint32_t handle, std::size_t addr) const;
  /// Wave-wide store of register `src`; lane i writes word addrs[i].
  void store(std::uint32_t handle, std::span<const std::size_t> addrs, const isa::RegisterRef& src);

 private:
  detail::WaveState* state_;
};

struct NativeKernel {
  std::string name;
  std::uint32_t declared_registers = 0;
  std::function<void(WaveContext&)> body;
};

using Kernel = std::variant<isa::Program, NativeKernel>;

struct Dispatch {
  std::shared_ptr<const Kernel> kernel;
  std::uint32_t group_count = 1;
  std::uint32_t group_size = 32;
  /// Program buffer handle (bN) -> simulator buffer.
  std::map<std::uint32_t, BufferId> buffers;

  static Dispatch of(isa::Program p, std::uint32_t groups, std::uint32_t group_size,
                     std::map<std::uint32_t, BufferId> buffers);
  static Dispatch of(NativeKernel k, std::uint32_t groups, std::uint32_t group_size,
                     std::map<std::uint32_t, BufferId> buffers);
};

struct ExecutionReport {
  std::uint64_t dispatch_id = 0;
  /// Final contents of every bound buffer, by program handle.
  std::map<std::uint32_t, std::vector<std::uint32_t>> buffers;
  std::vector<LeakRecord> leaks;
  /// Core each group ran on.
  std::vector<std::uint32_t> group_core;
};

class Simulator {
 public:
  explicit Simulator(GpuConfig cfg);
  ~Simulator();
  Simulator(Simulator&&) noexcept;
  Simulator& operator=(Simulator&&) noexcept;

  const GpuConfig& config() const { return cfg_; }

  BufferId create_buffer(std::size_t words);
  BufferId upload(std::span<const std::uint32_t> words);
  BufferId upload_floats(std::span<const float> values);
  void write_buffer(BufferId id, std::span<const std::uint32_t> words);

  std::span<const std::uint32_t> words(BufferId id) const;
  std::vector<float> read_floats(BufferId id) const;
  /// Little-endian bytes of the buffer.
  std::vector<std::uint8_t> read_buffer(BufferId id) const;

  /// Runs one dispatch to completion.
  ExecutionReport dispatch(const Dispatch& d);

  /// Runs co-resident dispatches, interleaving their waves on each core:
  /// wave k of every dispatch runs before wave k+1 of any of them.
  std::vector<ExecutionReport> dispatch_concurrent(std::span<const Dispatch> ds);

  /// Wave-wide coalesced store of `lane_values` to words [base, base+n).
  void coalesced_store(std::uint32_t core, std::uint32_t simd,
                       std::span<const std::uint32_t> lane_values, BufferId buffer,
                       std::size_t base);

  std::span<const std::uint32_t> residue(std::uint32_t core, std::uint32_t simd) const;

  /// Uninitialized-read records are collected unless disabled (saves memory
  /// on large sweeps).
  void set_record_leaks(bool on) { record_leaks_ = on; }
  bool record_leaks() const { return record_leaks_; }
  std::uint64_t dispatch_count() const { return next_dispatch_id_; }

 private:
  friend struct detail::WaveState;
  struct SimdUnit;

  SimdUnit& unit(std::uint32_t core, std::uint32_t simd);
  const SimdUnit& unit(std::uint32_t core, std::uint32_t simd) const;
  std::vector<std::uint32_t>& buffer(BufferId id);
  const std::vector<std::uint32_t>& buffer(BufferId id) const;
  std::vector<ExecutionReport> run(std::span<const Dispatch> ds);

  GpuConfig cfg_;
  std::vector<SimdUnit> units_;
  std::vector<std::vector<std::uint32_t>> buffers_;
  std::uint64_t next_dispatch_id_ = 0;
  bool record_leaks_ = true;
};

}  // namespace stalereg::sim
