#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace xconv {

struct Seed {
  std::array<unsigned char, 32> bytes{};
  friend bool operator==(const Seed&, const Seed&) = default;
};

/// Root key for a 64-bit session seed. All randomness in a session hangs off this.
Seed session_key(std::uint64_t session_seed);
/// Domain-separated subkey (keyed BLAKE2b of the label).
Seed derive(const Seed& parent, std::string_view label);
Seed derive(const Seed& parent, std::string_view label, std::uint64_t index);

/// 32-byte commitment to a session seed, exchanged in the handshake.
std::array<unsigned char, 32> commit(std::uint64_t session_seed);

// Deterministic ChaCha20 keystream. Output depends only on the key and on how many
// words have been drawn so far, never on the chunking of the calls.
class Prg {
 public:
  explicit Prg(const Seed& key);

  std::uint64_t next();
  void fill(std::span<std::uint64_t> out);
  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Uniform in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  Seed key_;
  std::uint64_t block_counter_ = 0;
  std::array<std::uint64_t, 64> buffer_{};
  std::size_t pos_ = 64;
};

}  // namespace xconv
