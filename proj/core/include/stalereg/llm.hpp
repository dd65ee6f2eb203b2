#pragma once

// Embedding-layer victim (token embedding + positional embedding) and the
// bit-pattern lookup-table reconstruction of leaked outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "stalereg/sim.hpp"

namespace stalereg::llm {

struct EmbeddingTables {
  std::uint32_t vocab = 0;      ///< V
  std::uint32_t dim = 0;        ///< D
  std::uint32_t positions = 0;  ///< P
  std::vector<float> token;     ///< V x D, row-major
  std::vector<float> position;  ///< P x D, row-major

  float sum(std::uint32_t t, std::uint32_t p, std::uint32_t i) const {
    return token[std::size_t{t} * dim + i] + position[std::size_t{p} * dim + i];
  }
};

EmbeddingTables make_tables(std::uint32_t vocab, std::uint32_t dim, std::uint32_t positions,
                            std::uint64_t seed);

/// Little-endian u32 V, D, P, then the token and position matrices as float32.
void write_tables(std::ostream& out, const EmbeddingTables& t);
EmbeddingTables read_tables(std::istream& in);
void write_tables(const std::filesystem::path& path, const EmbeddingTables& t);
EmbeddingTables read_tables(const std::filesystem::path& path);

/// Raw little-endian float32 stream.
void write_floats(const std::filesystem::path& path, std::span<const float> v);
std::vector<float> read_floats(const std::filesystem::path& path);

/// One thread group of D threads per token; token i sits at position i.
/// Throws std::invalid_argument on an out-of-range id or more than P tokens.
sim::Dispatch embed_dispatch(sim::Simulator& sim, const EmbeddingTables& t,
                             std::span<const std::uint32_t> tokens, sim::BufferId& output);
/// Runs the victim; empty input gives an empty output.
std::vector<float> embed(sim::Simulator& sim, const EmbeddingTables& t,
                         std::span<const std::uint32_t> tokens);

/// Runs the victim co-resident with an attacker that dumps every cell of the
/// victim's register window, and returns the dump (one region per cell).
std::vector<float> leak_embeddings(const sim::GpuConfig& cfg, const EmbeddingTables& t,
                                   std::span<const std::uint32_t> tokens);

struct LutEntry {
  std::uint32_t key = 0;  ///< float bit pattern
  std::uint32_t token = 0;
  std::uint32_t position = 0;
  std::uint32_t index = 0;  ///< within the embedding vector
};

/// Multimap from float bit patterns to every (token, position, index) producing them.
class EmbeddingLut {
 public:
  EmbeddingLut() = default;
  EmbeddingLut(const EmbeddingTables& t, std::uint32_t max_pos);

  std::span<const LutEntry> find(float v) const;
  std::size_t size() const { return entries_.size(); }
  std::uint32_t max_pos() const { return max_pos_; }

 private:
  std::vector<LutEntry> entries_;  ///< sorted by (key, token, position, index)
  std::uint32_t max_pos_ = 0;
};

EmbeddingLut build_lut(const EmbeddingTables& t, std::uint32_t max_pos);

struct ReconstructedToken {
  std::size_t chunk_offset = 0;
  std::uint32_t token = 0;
  std::uint32_t position = 0;
  bool operator==(const ReconstructedToken&) const = default;
};

struct ReconstructOptions {
  std::size_t chunk = 16;
  /// chunk for disjoint chunks, 1 for a sliding window.
  std::size_t stride = 16;
  std::size_t min_hits = 16;
};

/// A chunk is accepted for (token, position) when at least min_hits of its
/// values hit that pair with strictly ascending in-vector indices. Among
/// several accepted pairs the lowest (token, position) wins.
std::vector<ReconstructedToken> reconstruct(std::span<const float> leaked, const EmbeddingLut& lut,
                                            const ReconstructOptions& options = {});

/// `chunk_offset,token,position`
void write_tokens_csv(std::ostream& out, std::span<const ReconstructedToken> tokens);

}  // namespace stalereg::llm
