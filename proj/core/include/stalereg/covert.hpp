#pragma once

// Covert channel over stale registers.
//
// A frame occupies one register across the lanes of a wave: lane 0 carries
// the header (magic << 16 | counter), lanes 1..N carry payload words, four
// little-endian bytes each. Under StoreResidue a frame is half a wave long and
// the sender repeats it in both halves.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "stalereg/isa.hpp"
#include "stalereg/sim.hpp"

namespace stalereg::covert {

inline constexpr std::uint16_t kDefaultMagic = 0xC0DE;
inline constexpr std::size_t kCounterSpace = 1u << 16;

struct FrameLayout {
  std::uint32_t words = 32;
  std::size_t capacity() const { return (static_cast<std::size_t>(words) - 1) * 4; }
};

/// Frame layout a profile supports: a full wave, or a half wave under StoreResidue.
FrameLayout layout_for(const sim::GpuConfig& cfg);

struct Frame {
  std::uint16_t magic = kDefaultMagic;
  /// Full frame index; the header carries the low 16 bits.
  std::uint32_t counter = 0;
  std::vector<std::uint8_t> payload;  ///< exactly layout.capacity() bytes

  std::uint32_t header() const { return std::uint32_t{magic} << 16 | (counter & 0xffffu); }
};

/// True when a message needs more frames than the 16-bit counter distinguishes;
/// payload byte 0 then holds the epoch (counter >> 16).
bool needs_epoch(std::size_t message_length, const FrameLayout& layout);

/// Throws std::invalid_argument on an empty message.
std::vector<Frame> encode(std::span<const std::uint8_t> message, const FrameLayout& layout,
                          std::uint16_t magic = kDefaultMagic);
std::vector<std::uint32_t> frame_words(const Frame& f);

struct ChannelStats {
  std::size_t frames_sent = 0;
  std::size_t frames_received = 0;
  std::size_t duplicates = 0;
  std::size_t losses = 0;
  std::size_t payload_bytes_delivered = 0;
  std::size_t simulated_dispatch_count = 0;

  bool operator==(const ChannelStats&) const = default;
};

struct ReceiveOptions {
  FrameLayout layout;
  std::uint16_t magic = kDefaultMagic;
  /// Agreed message length; trims the last frame and bounds valid counters.
  std::optional<std::size_t> message_length;
};

struct ReceiveResult {
  std::vector<std::uint8_t> message;  ///< missing frames read as zero bytes
  ChannelStats stats;
};

/// Scans `words` in frame-sized blocks.
ReceiveResult receive(std::span<const std::uint32_t> words, const ReceiveOptions& options);
/// Rebuilds per-wave words from uninitialized reads, one value per lane.
ReceiveResult receive(std::span<const sim::LeakRecord> leaks, const ReceiveOptions& options);

/// Register cells the sender fills and the receiver reads from.
struct RegisterWindow {
  std::uint32_t base = 0;
  std::uint32_t cells = 0;
};

/// High registers by default; the whole file when the remap is permuted.
RegisterWindow default_window(const sim::GpuConfig& cfg);

/// b0 holds frame words per thread; under StoreResidue the frame is also
/// stored coalesced to b1.
isa::Program sender_kernel(const sim::GpuConfig& cfg, const RegisterWindow& window);
/// Stores the stale value of the window's first cell to b0[tid].
isa::Program receiver_kernel(const sim::GpuConfig& cfg, const RegisterWindow& window);

/// Writes seeded values into random registers; background noise.
isa::Program junk_kernel(const sim::GpuConfig& cfg, std::uint64_t seed);

struct TransmitOptions {
  /// 0 selects one group per SIMD unit.
  std::uint32_t sender_groups = 0;
  std::uint32_t receiver_groups = 0;
  /// Junk dispatches injected before every sender dispatch.
  std::uint32_t junk_per_round = 0;
  std::uint16_t magic = kDefaultMagic;
  std::optional<RegisterWindow> window;
};

/// Sends every frame once, `sender_groups` frames per round.
ReceiveResult transmit(sim::Simulator& sim, std::span<const std::uint8_t> message,
                       const TransmitOptions& options = {});

struct SweepOptions {
  std::vector<std::uint32_t> sender_groups{2, 4, 8, 16, 32};
  std::vector<std::uint32_t> receiver_groups{2, 4, 8, 16, 32};
  std::size_t message_frames = 96;
  /// Fixed cost of one dispatch launch, in thread-group units.
  std::uint32_t launch_overhead = 4;
};

struct SweepCell {
  std::uint32_t sender_groups = 0;
  std::uint32_t receiver_groups = 0;
  ChannelStats stats;
  std::size_t rounds = 0;
  /// Unique payload bytes per unit of simulated dispatch cost.
  double bytes_per_dispatch = 0.0;
  double loss_rate = 0.0;
};

std::vector<SweepCell> sweep(const sim::GpuConfig& cfg, const SweepOptions& options = {});
/// `sender_groups,receiver_groups,bytes_per_dispatch,loss_rate`
void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells);

}  // namespace stalereg::covert
