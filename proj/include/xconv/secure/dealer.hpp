#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xconv/fixed_point.hpp"
#include "xconv/graph.hpp"
#include "xconv/rng.hpp"

namespace xconv::secure {

/// AND-gate widths, level by level, of the prefix comparison on k-bit operands.
std::vector<int> comparison_and_widths(int k);

enum class Stream : int { kTriples = 0, kTruncation = 1, kComparison = 2 };
inline constexpr int kStreamCount = 3;
const char* to_string(Stream s);

/// Correlated randomness a graph consumes, in tuples per stream.
struct MaterialRequirements {
  std::uint64_t triples = 0;
  std::uint64_t truncations = 0;
  std::uint64_t comparisons = 0;

  std::uint64_t count(Stream s) const;
  friend bool operator==(const MaterialRequirements&, const MaterialRequirements&) = default;
};

/// Triples = total multiplications, truncations = truncated outputs, comparisons = ReLU elements
/// plus (window^2 - 1) per maxpool output.
MaterialRequirements material_requirements(const Graph& graph);

// Word layout of one tuple, per party.
//   triple:      a, b, c                                         (arithmetic)
//   truncation:  r, r_bits, r >> s, msb(r), {a, b, c} per AND level, b2a bit, b2a value
//   comparison:  r, r_bits, {a, b, c} per AND level, b2a bit, b2a value, a, b, c
// r_bits and the AND triples are XOR shares; everything else is additive mod 2^l.
struct TupleLayout {
  std::size_t words = 0;
  std::size_t levels_offset = 0;
  std::vector<int> widths;
  std::size_t b2a_offset = 0;
  std::size_t mult_offset = 0;  // comparison only
};
TupleLayout tuple_layout(Stream s, const FixedPointConfig& cfg);

/// Sequential per-party reader of dealer material.
class MaterialSource {
 public:
  virtual ~MaterialSource() = default;
  /// Fills `count` tuples of stream s (count * layout.words words); throws MaterialError when the
  /// stream runs dry.
  virtual void take(Stream s, std::uint64_t count, std::vector<std::uint64_t>& out) = 0;
  virtual int party() const = 0;
  virtual const FixedPointConfig& config() const = 0;
  virtual const MaterialRequirements& capacity() const = 0;
  virtual std::uint64_t consumed(Stream s) const = 0;
};

/// Expands material on the fly from the session seed. Both parties' instances draw from the same
/// dealer streams, so they stay consistent while consumed in the same order.
class GeneratedMaterial : public MaterialSource {
 public:
  GeneratedMaterial(int party, const FixedPointConfig& cfg, std::uint64_t seed, MaterialRequirements capacity);

  void take(Stream s, std::uint64_t count, std::vector<std::uint64_t>& out) override;
  int party() const override { return party_; }
  const FixedPointConfig& config() const override { return cfg_; }
  const MaterialRequirements& capacity() const override { return capacity_; }
  std::uint64_t consumed(Stream s) const override { return cursor_[static_cast<int>(s)]; }

 private:
  int party_;
  FixedPointConfig cfg_;
  MaterialRequirements capacity_;
  std::array<TupleLayout, kStreamCount> layouts_;
  std::vector<Prg> secret_, mask_;
  std::array<std::uint64_t, kStreamCount> cursor_{};
};

/// Parsed DLR1 material for one party.
class BufferMaterial : public MaterialSource {
 public:
  /// Throws MaterialError on a bad magic, checksum or layout.
  explicit BufferMaterial(std::string bytes);

  void take(Stream s, std::uint64_t count, std::vector<std::uint64_t>& out) override;
  int party() const override { return party_; }
  const FixedPointConfig& config() const override { return cfg_; }
  const MaterialRequirements& capacity() const override { return capacity_; }
  std::uint64_t consumed(Stream s) const override { return cursor_[static_cast<int>(s)]; }
  std::uint64_t seed_tag() const { return seed_tag_; }

 private:
  std::string bytes_;
  int party_ = 0;
  FixedPointConfig cfg_;
  MaterialRequirements capacity_;
  std::uint64_t seed_tag_ = 0;
  std::array<TupleLayout, kStreamCount> layouts_;
  std::array<std::size_t, kStreamCount> offset_{};
  std::array<std::uint64_t, kStreamCount> cursor_{};
};

// DLR1: "DLR1", party (u8), bitwidth (u8), scale (u8), seed tag (u64), tuple counts (3 x u64),
// words of each stream (u64 LE), 32-byte BLAKE2b of everything before it.
std::string material_bytes(int party, const FixedPointConfig& cfg, std::uint64_t seed,
                           const MaterialRequirements& req);

/// Writes <prefix>.p0.dlr and <prefix>.p1.dlr; returns both paths.
std::array<std::string, 2> write_material_files(const std::string& prefix, const FixedPointConfig& cfg,
                                                std::uint64_t seed, const MaterialRequirements& req);

/// Public tag of a session seed recorded in material headers (never the seed itself).
std::uint64_t seed_tag(std::uint64_t seed);

}  // namespace xconv::secure
