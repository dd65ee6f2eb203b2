#include "stalereg/cnn.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <stdexcept>

#include "stalereg/rng.hpp"

namespace stalereg::cnn {

namespace {

using isa::RegisterRef;

RegisterRef reg(std::uint32_t i, isa::RegisterModel model) {
  return model == isa::RegisterModel::Quad ? RegisterRef::quad(i, isa::Component::X)
                                           : RegisterRef::general(i);
}

std::uint32_t cells_for(std::uint32_t regs, isa::RegisterModel model) {
  return model == isa::RegisterModel::Quad ? regs * 4 : regs;
}

float uniform(Rng& rng, float lo, float hi) {
  return lo + static_cast<float>(rng.uniform01()) * (hi - lo);
}

std::vector<std::size_t> lane_addrs(sim::WaveContext& ctx, std::size_t base) {
  std::vector<std::size_t> a(ctx.active_lanes());
  for (std::uint32_t l = 0; l < a.size(); ++l) a[l] = base + ctx.local_id(l);
  return a;
}

sim::NativeKernel conv_kernel(isa::RegisterModel model) {
  const auto px = reg(0, model), acc = reg(1, model), out = reg(2, model);
  return {"conv5x5", cells_for(3, model), [=](sim::WaveContext& ctx) {
            const auto f = ctx.group();
            for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
              const auto p = ctx.local_id(l);
              const auto oy = p / kConvSide, ox = p % kConvSide;
              ctx.write_float(acc, l, 0.0f);
              for (std::uint32_t ky = 0; ky < kKernel; ++ky) {
                for (std::uint32_t kx = 0; kx < kKernel; ++kx) {
                  ctx.write_float(px, l, ctx.load_float(0, (oy + ky) * kInput + ox + kx));
                  const float w = ctx.load_float(1, f * kKernel * kKernel + ky * kKernel + kx);
                  ctx.write_float(acc, l, ctx.read_float(acc, l) + w * ctx.read_float(px, l));
                }
              }
              ctx.write_float(out, l, ctx.read_float(acc, l) + ctx.load_float(2, f));
            }
            ctx.store(3, lane_addrs(ctx, std::size_t{f} * kConvSize), out);
          }};
}

sim::NativeKernel relu_kernel(isa::RegisterModel model) {
  const auto v = reg(0, model), out = reg(1, model);
  return {"relu", cells_for(2, model), [=](sim::WaveContext& ctx) {
            const std::size_t base = std::size_t{ctx.group()} * ctx.group_size();
            for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
              ctx.write_float(v, l, ctx.load_float(0, base + ctx.local_id(l)));
              const float x = ctx.read_float(v, l);
              ctx.write_float(out, l, x > 0.0f ? x : 0.0f);
            }
            ctx.store(1, lane_addrs(ctx, base), out);
          }};
}

sim::NativeKernel pool_kernel(isa::RegisterModel model) {
  const auto v = reg(0, model), m = reg(1, model);
  return {"maxpool2x2", cells_for(2, model), [=](sim::WaveContext& ctx) {
            const auto f = ctx.group();
            for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
              const auto p = ctx.local_id(l);
              const auto y = 2 * (p / kPoolSide), x = 2 * (p % kPoolSide);
              const std::size_t base = std::size_t{f} * kConvSize;
              const std::array<std::size_t, 4> src{base + y * kConvSide + x,
                                                   base + y * kConvSide + x + 1,
                                                   base + (y + 1) * kConvSide + x,
                                                   base + (y + 1) * kConvSide + x + 1};
              ctx.write_float(m, l, ctx.load_float(0, src[0]));
              for (std::size_t k = 1; k < 4; ++k) {
                ctx.write_float(v, l, ctx.load_float(0, src[k]));
                if (ctx.read_float(v, l) > ctx.read_float(m, l)) ctx.write_float(m, l, ctx.read_float(v, l));
              }
            }
            ctx.store(1, lane_addrs(ctx, std::size_t{f} * kPoolSize), m);
          }};
}

sim::NativeKernel dense_kernel(isa::RegisterModel model) {
  const auto x = reg(0, model), acc = reg(1, model);
  return {"dense", cells_for(2, model), [=](sim::WaveContext& ctx) {
            for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
              const auto j = ctx.local_id(l);
              ctx.write_float(acc, l, 0.0f);
              for (std::uint32_t i = 0; i < kDenseIn; ++i) {
                ctx.write_float(x, l, ctx.load_float(0, i));
                const float w = ctx.load_float(1, std::size_t{j} * kDenseIn + i);
                ctx.write_float(acc, l, ctx.read_float(acc, l) + w * ctx.read_float(x, l));
              }
              ctx.write_float(acc, l, ctx.read_float(acc, l) + ctx.load_float(2, j));
            }
            ctx.store(3, lane_addrs(ctx, 0), acc);
          }};
}

isa::Instruction inst(isa::Opcode op, std::optional<RegisterRef> dst,
                      std::vector<isa::Operand> srcs = {},
                      std::optional<isa::MemoryRef> mem = std::nullopt) {
  return isa::Instruction{op, dst, std::move(srcs), std::move(mem)};
}

std::uint32_t bits(float f) { return std::bit_cast<std::uint32_t>(f); }

}  // namespace

CnnModel make_model(std::uint64_t seed) {
  Rng rng(seed);
  CnnModel m;
  m.conv_w.resize(kFilters * kKernel * kKernel);
  for (auto& w : m.conv_w) w = uniform(rng, -0.5f, 0.5f);
  m.conv_b.resize(kFilters);
  for (auto& b : m.conv_b) {
    b = uniform(rng, 0.05f, 0.15f);
    if (rng.below(2)) b = -b;
  }
  m.dense_w.resize(std::size_t{kClasses} * kDenseIn);
  for (auto& w : m.dense_w) w = uniform(rng, -0.05f, 0.05f);
  m.dense_b.resize(kClasses);
  for (auto& b : m.dense_b) b = uniform(rng, -0.1f, 0.1f);
  return m;
}

GrayImage make_input(std::uint64_t seed) {
  const auto big = make_plasma(32, seed, 0.5);
  GrayImage img(kInput, kInput);
  for (std::uint32_t y = 0; y < kInput; ++y) {
    for (std::uint32_t x = 0; x < kInput; ++x) img.at(x, y) = big.at(x, y);
  }
  return img;
}

Activations reference_forward(const CnnModel& m, const GrayImage& img) {
  if (img.width != kInput || img.height != kInput) throw std::invalid_argument("input must be 28x28");
  Activations a;
  a.conv.resize(kFilters * kConvSize);
  for (std::uint32_t f = 0; f < kFilters; ++f) {
    for (std::uint32_t p = 0; p < kConvSize; ++p) {
      const auto oy = p / kConvSide, ox = p % kConvSide;
      float acc = 0.0f;
      for (std::uint32_t ky = 0; ky < kKernel; ++ky) {
        for (std::uint32_t kx = 0; kx < kKernel; ++kx) {
          acc = acc + m.conv_w[f * kKernel * kKernel + ky * kKernel + kx] * img.at(ox + kx, oy + ky);
        }
      }
      a.conv[f * kConvSize + p] = acc + m.conv_b[f];
    }
  }
  a.relu.resize(a.conv.size());
  std::transform(a.conv.begin(), a.conv.end(), a.relu.begin(), [](float v) { return v > 0.0f ? v : 0.0f; });
  a.pool.resize(kFilters * kPoolSize);
  for (std::uint32_t f = 0; f < kFilters; ++f) {
    for (std::uint32_t p = 0; p < kPoolSize; ++p) {
      const auto y = 2 * (p / kPoolSide), x = 2 * (p % kPoolSide);
      const float* base = &a.relu[f * kConvSize];
      float mx = base[y * kConvSide + x];
      for (float v : {base[y * kConvSide + x + 1], base[(y + 1) * kConvSide + x],
                      base[(y + 1) * kConvSide + x + 1]}) {
        if (v > mx) mx = v;
      }
      a.pool[f * kPoolSize + p] = mx;
    }
  }
  a.logits.resize(kClasses);
  for (std::uint32_t j = 0; j < kClasses; ++j) {
    float acc = 0.0f;
    for (std::uint32_t i = 0; i < kDenseIn; ++i) acc = acc + m.dense_w[std::size_t{j} * kDenseIn + i] * a.pool[i];
    a.logits[j] = acc + m.dense_b[j];
  }
  return a;
}

ForwardRun forward(sim::Simulator& sim, const CnnModel& m, const GrayImage& img,
                   const ForwardOptions& options) {
  if (img.width != kInput || img.height != kInput) throw std::invalid_argument("input must be 28x28");
  const auto model = sim.config().register_model;
  const auto input = sim.upload_floats(img.pixels);
  const auto conv_w = sim.upload_floats(m.conv_w);
  const auto conv_b = sim.upload_floats(m.conv_b);
  const auto conv = sim.create_buffer(kFilters * kConvSize);
  const auto relu = sim.create_buffer(kFilters * kConvSize);
  const auto pool = sim.create_buffer(kFilters * kPoolSize);
  const auto dense_w = sim.upload_floats(m.dense_w);
  const auto dense_b = sim.upload_floats(m.dense_b);
  const auto logits = sim.create_buffer(kClasses);

  auto after = [&](Layer l) {
    if (options.after_layer) options.after_layer(sim, l);
  };

  std::vector<sim::Dispatch> first{sim::Dispatch::of(
      conv_kernel(model), kFilters, kConvSize, {{0, input}, {1, conv_w}, {2, conv_b}, {3, conv}})};
  first.insert(first.end(), options.with_conv.begin(), options.with_conv.end());
  sim.dispatch_concurrent(first);
  after(Layer::Conv);
  sim.dispatch(sim::Dispatch::of(relu_kernel(model), kFilters, kConvSize, {{0, conv}, {1, relu}}));
  after(Layer::Relu);
  sim.dispatch(sim::Dispatch::of(pool_kernel(model), kFilters, kPoolSize, {{0, relu}, {1, pool}}));
  after(Layer::Pool);
  sim.dispatch(sim::Dispatch::of(dense_kernel(model), 1, kClasses,
                                 {{0, pool}, {1, dense_w}, {2, dense_b}, {3, logits}}));
  after(Layer::Dense);

  ForwardRun run;
  run.conv_buffer = conv;
  run.activations.conv = sim.read_floats(conv);
  run.activations.relu = sim.read_floats(relu);
  run.activations.pool = sim.read_floats(pool);
  run.activations.logits = sim.read_floats(logits);
  return run;
}

isa::Program attacker_nvidia() {
  isa::Program p;
  p.name = "leak_r8";
  p.declared_registers = 9;
  const auto tid = RegisterRef::general(1);
  p.instructions.push_back(inst(isa::Opcode::GetThreadId, tid));
  p.instructions.push_back(
      inst(isa::Opcode::StoreGlobal, std::nullopt, {RegisterRef::general(8)}, isa::MemoryRef{0, tid}));
  p.instructions.push_back(inst(isa::Opcode::Exit, std::nullopt));
  return p;
}

isa::Program attacker_adreno() {
  using isa::Component;
  isa::Program p;
  p.name = "leak_r2x";
  p.model = isa::RegisterModel::Quad;
  p.declared_registers = 12;
  const auto addr = RegisterRef::quad(0, Component::X);
  const auto tid = RegisterRef::quad(0, Component::Y);
  p.instructions.push_back(inst(isa::Opcode::GetThreadId, tid));
  p.instructions.push_back(inst(isa::Opcode::IAdd, addr, {tid, isa::Immediate{4}}));
  p.instructions.push_back(inst(isa::Opcode::StoreGlobal, std::nullopt,
                                {RegisterRef::quad(2, Component::X)}, isa::MemoryRef{0, addr}));
  p.instructions.push_back(inst(isa::Opcode::Exit, std::nullopt));
  return p;
}

NvidiaLeak attack_nvidia(const sim::GpuConfig& cfg, const CnnModel& m, const GrayImage& img) {
  sim::Simulator sim(cfg);
  sim.set_record_leaks(false);
  const auto out = sim.create_buffer(kFilters * kConvSize);
  ForwardOptions opts;
  opts.with_conv.push_back(sim::Dispatch::of(attacker_nvidia(), kFilters, kConvSize, {{0, out}}));
  NvidiaLeak leak;
  leak.victim = forward(sim, m, img, opts).activations;

  // The residue keeps the half wave whose transaction issues last.
  const auto half = cfg.half_wave();
  const std::uint32_t first_lane =
      cfg.half_wave_order == sim::HalfWaveOrder::UpperFirst ? 0 : half;
  const auto words = sim.read_floats(out);
  leak.mask.assign(words.size(), 0);
  const auto waves = (kConvSize + cfg.wave_width - 1) / cfg.wave_width;
  for (std::uint32_t g = 0; g < kFilters; ++g) {
    for (std::uint32_t w = 0; w < waves; ++w) {
      const std::uint32_t start = w * cfg.wave_width + first_lane;
      if (start + 16 > kConvSize || half < 16) continue;
      LeakSegment s;
      s.group = g;
      s.wave = w;
      s.position = g * kConvSize + start;
      for (std::uint32_t i = 0; i < 16; ++i) {
        s.values[i] = words[g * kConvSize + w * cfg.wave_width + i];
        leak.mask[s.position + i] = 1;
      }
      leak.segments.push_back(s);
    }
  }
  leak.density = static_cast<double>(std::count(leak.mask.begin(), leak.mask.end(), 1)) /
                 static_cast<double>(leak.mask.size());
  return leak;
}

double overlap_cost(std::span<const float> a, std::span<const float> b, std::size_t overlap) {
  double c = 0.0;
  for (std::size_t i = 0; i < overlap; ++i) {
    const double d = static_cast<double>(a[a.size() - overlap + i]) - b[i];
    c += d * d;
  }
  return c;
}

StitchResult reconstruct_overlap(std::span<const LeakSegment> segments, std::size_t overlap,
                                 std::size_t stride) {
  StitchResult best;
  const std::size_t n = segments.size();
  if (n == 0) return best;
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      cost[a * n + b] = overlap_cost(segments[a].values, segments[b].values, overlap);
    }
  }

  best.cost = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < n; ++start) {
    std::vector<bool> used(n, false);
    std::vector<std::size_t> order{start};
    used[start] = true;
    double total = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      const auto cur = order.back();
      std::size_t next = n;
      for (std::size_t b = 0; b < n; ++b) {
        if (!used[b] && (next == n || cost[cur * n + b] < cost[cur * n + next])) next = b;
      }
      total += cost[cur * n + next];
      used[next] = true;
      order.push_back(next);
    }
    if (total < best.cost) {
      best.cost = total;
      best.order = std::move(order);
    }
  }

  const std::size_t len = segments.front().values.size();
  best.values.assign((n - 1) * stride + len, 0.0f);
  best.mask.assign(best.values.size(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = segments[best.order[k]];
    for (std::size_t i = 0; i < len; ++i) {
      best.values[k * stride + i] = s.values[i];
      best.mask[k * stride + i] = 1;
    }
  }
  return best;
}

std::size_t calibrate_prefix(const sim::GpuConfig& cfg) {
  sim::Simulator sim(cfg);
  sim.set_record_leaks(false);
  const auto model = cfg.register_model;
  const auto marker = reg(2, model);
  sim.dispatch(sim::Dispatch::of(
      sim::NativeKernel{"calibrate", cells_for(3, model),
                        [=](sim::WaveContext& ctx) {
                          for (std::uint32_t l = 0; l < ctx.active_lanes(); ++l) {
                            ctx.write(marker, l, 0xffffffffu);
                          }
                        }},
      kFilters, kConvSize, {}));
  const auto out = sim.create_buffer(kFilters * kConvSize + 4);
  sim.dispatch(sim::Dispatch::of(attacker_adreno(), kFilters, kConvSize, {{0, out}}));
  const auto words = sim.words(out);
  const auto it = std::find_if(words.begin(), words.end(), [](std::uint32_t w) { return w != 0; });
  return static_cast<std::size_t>(it - words.begin()) * 4;
}

AdrenoLeak attack_adreno(const sim::GpuConfig& cfg, const CnnModel& m, const GrayImage& img,
                         std::uint32_t min_run) {
  if (cfg.register_model != isa::RegisterModel::Quad) {
    throw std::invalid_argument("the Adreno attacker needs the quad register model");
  }
  sim::Simulator sim(cfg);
  sim.set_record_leaks(false);
  const auto out = sim.create_buffer(kFilters * kConvSize + 4);
  ForwardOptions opts;
  opts.after_layer = [&](sim::Simulator& s, Layer l) {
    if (l == Layer::Conv) {
      s.dispatch(sim::Dispatch::of(attacker_adreno(), kFilters, kConvSize, {{0, out}}));
    }
  };
  AdrenoLeak leak;
  leak.victim = forward(sim, m, img, opts).activations;
  leak.prefix_bytes = calibrate_prefix(cfg);
  const auto all = sim.read_floats(out);
  const auto skip = std::min(all.size(), leak.prefix_bytes / 4);
  leak.stream.assign(all.begin() + static_cast<std::ptrdiff_t>(skip), all.end());

  // Longest common substring per filter, tracked as maximal diagonals.
  const auto& conv = leak.victim.conv;
  const auto n = leak.stream.size();
  for (std::uint32_t f = 0; f < kFilters; ++f) {
    std::vector<std::uint8_t> covered(kConvSize, 0);
    std::vector<std::uint32_t> prev(kConvSize + 1, 0), cur(kConvSize + 1, 0);
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::uint32_t j = 0; j <= kConvSize; ++j) {
        const bool match = i < n && j < kConvSize &&
                           bits(leak.stream[i]) == bits(conv[f * kConvSize + j]);
        cur[j] = match ? (j > 0 && i > 0 ? prev[j - 1] : 0) + 1 : 0;
        // A diagonal ends at (i-1, j-1) when it does not continue into (i, j).
        if (i > 0 && j > 0 && !match && prev[j - 1] >= min_run) {
          const auto len = prev[j - 1];
          leak.runs.push_back(Run{i - len, f, j - len, len});
          std::fill_n(covered.begin() + (j - len), len, 1);
          leak.longest_run = std::max(leak.longest_run, len);
        }
      }
      std::swap(prev, cur);
    }
    const double cov = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / kConvSize;
    if (cov > leak.coverage) {
      leak.coverage = cov;
      leak.best_filter = f;
    }
  }
  return leak;
}

}  // namespace stalereg::cnn
