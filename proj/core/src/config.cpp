#include <algorithm>
#include <charconv>
#include <sstream>

#include "stalereg/sim.hpp"

namespace stalereg::sim {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  int base = 10;
  if (v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X')) {
    v.remove_prefix(2);
    base = 16;
  }
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("bad integer for '" + std::string(key) + "': " + std::string(v));
  }
  return out;
}

std::uint32_t parse_u32(std::string_view key, std::string_view v) {
  const auto x = parse_u64(key, v);
  if (x > 0xffffffffULL) throw ConfigError("value out of range for '" + std::string(key) + "'");
  return static_cast<std::uint32_t>(x);
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("bad boolean for '" + std::string(key) + "': " + std::string(v));
}

}  // namespace

UnknownProfile::UnknownProfile(const std::string& name)
    : ConfigError("unknown profile '" + name + "'; valid profiles: " + join(profile_names())) {}

std::vector<std::string> profile_names() { return {"adreno", "agx", "nvidia"}; }

GpuConfig profile(std::string_view name) {
  GpuConfig c;
  c.profile = std::string(name);
  if (name == "adreno") {
    c.num_cores = 2;
    c.simd_per_core = 8;
    c.regs_per_thread = 256;
    c.register_model = isa::RegisterModel::Quad;
    c.lifecycle = Lifecycle::NoClear;
    c.remap = RemapPolicy::Identity;
  } else if (name == "agx") {
    c.num_cores = 8;
    c.simd_per_core = 4;
    c.regs_per_thread = 128;
    c.lifecycle = Lifecycle::NoClear;
    c.remap = RemapPolicy::SeededPermutation;
  } else if (name == "nvidia") {
    c.num_cores = 8;
    c.simd_per_core = 4;
    c.regs_per_thread = 128;
    c.lifecycle = Lifecycle::StoreResidue;
    c.remap = RemapPolicy::Identity;
    c.half_wave_order = HalfWaveOrder::UpperFirst;
  } else {
    throw UnknownProfile(std::string(name));
  }
  return c;
}

void GpuConfig::validate() const {
  if (num_cores == 0) throw ConfigError("cores must be >= 1");
  if (simd_per_core == 0) throw ConfigError("simd_per_core must be >= 1");
  if (wave_width < 2 || wave_width % 2 != 0 || wave_width > 1024) {
    throw ConfigError("wave_width must be even and in [2, 1024]");
  }
  if (regs_per_thread == 0) throw ConfigError("regs_per_thread must be >= 1");
  if (register_model == isa::RegisterModel::Quad && regs_per_thread % 4 != 0) {
    throw ConfigError("quad register model needs regs_per_thread divisible by 4");
  }
}

std::string_view to_string(Lifecycle l) {
  switch (l) {
    case Lifecycle::NoClear: return "no_clear";
    case Lifecycle::StoreResidue: return "store_residue";
    case Lifecycle::ZeroOnAlloc: return "zero_on_alloc";
  }
  return "?";
}

std::string_view to_string(RemapPolicy r) {
  return r == RemapPolicy::Identity ? "identity" : "seeded_permutation";
}

std::string_view to_string(HalfWaveOrder o) {
  return o == HalfWaveOrder::LowerFirst ? "lower_first" : "upper_first";
}

GpuConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = line;
    if (auto h = s.find('#'); h != std::string_view::npos) s = s.substr(0, h);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    kv.emplace_back(std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
  }

  GpuConfig c;
  for (const auto& [k, v] : kv) {
    if (k != "profile") continue;
    if (v == "custom") c.profile = v;
    else c = profile(v);
  }
  for (const auto& [k, v] : kv) {
    if (k == "profile") continue;
    if (k == "cores" || k == "num_cores") c.num_cores = parse_u32(k, v);
    else if (k == "simd_per_core") c.simd_per_core = parse_u32(k, v);
    else if (k == "wave_width") c.wave_width = parse_u32(k, v);
    else if (k == "regs_per_thread") c.regs_per_thread = parse_u32(k, v);
    else if (k == "seed") c.seed = parse_u64(k, v);
    else if (k == "jitter") c.jitter = parse_bool(k, v);
    else if (k == "register_model") {
      if (v == "scalar") c.register_model = isa::RegisterModel::Scalar;
      else if (v == "quad") c.register_model = isa::RegisterModel::Quad;
      else throw ConfigError("register_model must be scalar or quad");
    } else if (k == "lifecycle") {
      if (v == "no_clear") c.lifecycle = Lifecycle::NoClear;
      else if (v == "store_residue") c.lifecycle = Lifecycle::StoreResidue;
      else if (v == "zero_on_alloc") c.lifecycle = Lifecycle::ZeroOnAlloc;
      else throw ConfigError("lifecycle must be no_clear, store_residue or zero_on_alloc");
    } else if (k == "remap") {
      if (v == "identity") c.remap = RemapPolicy::Identity;
      else if (v == "seeded_permutation") c.remap = RemapPolicy::SeededPermutation;
      else throw ConfigError("remap must be identity or seeded_permutation");
    } else if (k == "half_wave_order") {
      if (v == "lower_first") c.half_wave_order = HalfWaveOrder::LowerFirst;
      else if (v == "upper_first") c.half_wave_order = HalfWaveOrder::UpperFirst;
      else throw ConfigError("half_wave_order must be lower_first or upper_first");
    } else {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

std::string render_config(const GpuConfig& c) {
  std::ostringstream o;
  o << "profile = " << c.profile << '\n'
    << "cores = " << c.num_cores << '\n'
    << "simd_per_core = " << c.simd_per_core << '\n'
    << "wave_width = " << c.wave_width << '\n'
    << "regs_per_thread = " << c.regs_per_thread << '\n'
    << "register_model = " << (c.register_model == isa::RegisterModel::Quad ? "quad" : "scalar")
    << '\n'
    << "lifecycle = " << to_string(c.lifecycle) << '\n'
    << "remap = " << to_string(c.remap) << '\n'
    << "half_wave_order = " << to_string(c.half_wave_order) << '\n'
    << "jitter = " << (c.jitter ? "true" : "false") << '\n'
    << "seed = " << c.seed << '\n';
  return o.str();
}

}  // namespace stalereg::sim
