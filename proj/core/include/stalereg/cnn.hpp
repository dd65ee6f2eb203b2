#pragma once

// Desk-scale CNN run layer-per-kernel on the simulator:
// conv 8 x 5x5 (28x28 -> 8 x 24x24), ReLU, 2x2 max-pool, dense 1152 -> 10.
//
// Float operation order (shared by the kernels and the host reference):
//   conv:  acc = 0; acc += w[ky][kx] * in[oy+ky][ox+kx] over ky, kx; out = acc + bias
//   relu:  v > 0 ? v : 0
//   pool:  m = a00; then a01, a10, a11 replace m when strictly greater
//   dense: acc = 0; acc += w[j][i] * x[i] over i; out = acc + bias

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stalereg/image.hpp"
#include "stalereg/isa.hpp"
#include "stalereg/sim.hpp"

namespace stalereg::cnn {

inline constexpr std::uint32_t kInput = 28;
inline constexpr std::uint32_t kKernel = 5;
inline constexpr std::uint32_t kFilters = 8;
inline constexpr std::uint32_t kConvSide = kInput - kKernel + 1;    // 24
inline constexpr std::uint32_t kConvSize = kConvSide * kConvSide;  // 576
inline constexpr std::uint32_t kPoolSide = kConvSide / 2;          // 12
inline constexpr std::uint32_t kPoolSize = kPoolSide * kPoolSide;  // 144
inline constexpr std::uint32_t kDenseIn = kFilters * kPoolSize;    // 1152
inline constexpr std::uint32_t kClasses = 10;

struct CnnModel {
  std::vector<float> conv_w;   ///< [filter][ky][kx]
  std::vector<float> conv_b;   ///< [filter]
  std::vector<float> dense_w;  ///< [class][input]
  std::vector<float> dense_b;  ///< [class]
};

/// Seeded random weights; biases are never zero.
CnnModel make_model(std::uint64_t seed);
/// Smooth 28x28 input image.
GrayImage make_input(std::uint64_t seed);

struct Activations {
  std::vector<float> conv;    ///< [filter][y][x], 8 x 576
  std::vector<float> relu;
  std::vector<float> pool;    ///< [filter][y][x], 8 x 144
  std::vector<float> logits;  ///< 10
};

/// Host reference in the documented operation order.
Activations reference_forward(const CnnModel& m, const GrayImage& img);

enum class Layer { Conv, Relu, Pool, Dense };

struct ForwardOptions {
  /// Runs after each layer's dispatch, e.g. to place an attacker.
  std::function<void(sim::Simulator&, Layer)> after_layer;
  /// Dispatches co-resident with the conv layer.
  std::vector<sim::Dispatch> with_conv;
};

struct ForwardRun {
  Activations activations;
  sim::BufferId conv_buffer = 0;
};

/// One dispatch per layer; conv is 8 groups of 576 threads. Throws
/// std::invalid_argument unless the image is 28x28.
ForwardRun forward(sim::Simulator& sim, const CnnModel& m, const GrayImage& img,
                   const ForwardOptions& options = {});

/// `get_tid r1; st_global [b0+r1], r8`
isa::Program attacker_nvidia();
/// `get_tid r0.y; iadd r0.x, r0.y, 4; st_global [b0+r0.x], r2.x`
isa::Program attacker_adreno();

struct LeakSegment {
  std::array<float, 16> values{};
  /// Attacker group and wave that observed it.
  std::uint32_t group = 0;
  std::uint32_t wave = 0;
  /// Attributed conv-output index of values[0] (filter * 576 + offset).
  std::uint32_t position = 0;
};

struct NvidiaLeak {
  /// 8 x 576; 1 where a leaked value was attributed.
  std::vector<std::uint8_t> mask;
  double density = 0.0;
  std::vector<LeakSegment> segments;
  Activations victim;
};

/// Conv layer runs co-resident with the attacker, one attacker wave behind
/// every victim wave. Each attacker wave yields one half-wave segment.
NvidiaLeak attack_nvidia(const sim::GpuConfig& cfg, const CnnModel& m, const GrayImage& img);

struct StitchResult {
  /// Segment indices in chain order.
  std::vector<std::size_t> order;
  double cost = 0.0;
  /// Chain position k is placed at offset k * stride.
  std::vector<float> values;
  std::vector<std::uint8_t> mask;
};

/// SSD between the last `overlap` values of a and the first `overlap` of b.
double overlap_cost(std::span<const float> a, std::span<const float> b, std::size_t overlap = 8);

/// Greedy chaining from every start segment, keeping the cheapest chain.
/// Each step takes the cheapest unused successor, lowest index on ties.
StitchResult reconstruct_overlap(std::span<const LeakSegment> segments, std::size_t overlap = 8,
                                 std::size_t stride = 32);

struct Run {
  std::size_t stream_offset = 0;
  std::uint32_t filter = 0;
  std::uint32_t position = 0;  ///< within the filter output
  std::uint32_t length = 0;
};

struct AdrenoLeak {
  /// Attacker buffer words after the zero prefix.
  std::vector<float> stream;
  std::size_t prefix_bytes = 0;
  /// Maximal runs of at least min_run values matching the conv output.
  std::vector<Run> runs;
  std::uint32_t longest_run = 0;
  /// Best single-filter fraction of the 576 outputs covered by runs.
  double coverage = 0.0;
  std::uint32_t best_filter = 0;
  Activations victim;
};

/// Leading zero bytes the Adreno attacker buffer carries, measured against a
/// victim that leaves a known non-zero value in r2.x.
std::size_t calibrate_prefix(const sim::GpuConfig& cfg);

/// Attacker with the victim's group size runs after the conv layer.
AdrenoLeak attack_adreno(const sim::GpuConfig& cfg, const CnnModel& m, const GrayImage& img,
                         std::uint32_t min_run = 16);

}  // namespace stalereg::cnn
