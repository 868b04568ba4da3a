#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "xconv/tensor.hpp"

namespace xconv {

/// Fixed-point parameters: values live in Z/2^bitwidth with `scale` fractional bits.
struct FixedPointConfig {
  int bitwidth = 60;
  int scale = 23;

  /// Throws UnsupportedError unless 2 <= scale < bitwidth <= 64.
  void validate() const;

  std::uint64_t mask() const { return bitwidth == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bitwidth) - 1; }
  std::uint64_t reduce(std::uint64_t w) const { return w & mask(); }

  /// Two's-complement interpretation of a residue.
  std::int64_t to_signed(std::uint64_t w) const {
    w &= mask();
    if (bitwidth == 64) return static_cast<std::int64_t>(w);
    const std::uint64_t half = std::uint64_t{1} << (bitwidth - 1);
    return static_cast<std::int64_t>(w < half ? w : (w | ~mask()));
  }
  std::uint64_t from_signed(std::int64_t v) const { return static_cast<std::uint64_t>(v) & mask(); }

  /// Magnitude bound that truncation and comparison protocols rely on: |v| < 2^(bitwidth-2).
  std::int64_t activation_bound() const { return std::int64_t{1} << (bitwidth - 2); }

  friend bool operator==(const FixedPointConfig&, const FixedPointConfig&) = default;
};

/// Tensor of ring residues with the config that gives them meaning. Every word is < 2^bitwidth.
class RingTensor {
 public:
  RingTensor() = default;
  RingTensor(WordTensor words, FixedPointConfig cfg);
  RingTensor(Shape shape, FixedPointConfig cfg) : words_(std::move(shape)), cfg_(cfg) {}

  const WordTensor& words() const { return words_; }
  WordTensor& words() { return words_; }
  const FixedPointConfig& config() const { return cfg_; }
  const Shape& shape() const { return words_.shape(); }
  std::int64_t size() const { return words_.size(); }
  std::uint64_t operator[](std::int64_t i) const { return words_[i]; }

  friend bool operator==(const RingTensor& a, const RingTensor& b) {
    return a.cfg_ == b.cfg_ && a.words_ == b.words_;
  }

 private:
  WordTensor words_;
  FixedPointConfig cfg_;
};

/// floor(x * 2^scale) mod 2^bitwidth. Throws OverflowError when |x * 2^scale| >= 2^(bitwidth-1).
std::uint64_t encode_scalar(double x, const FixedPointConfig& cfg, int scale);
RingTensor encode_fixed(const RealTensor& x, const FixedPointConfig& cfg);
/// Encode at an explicit scale (biases that are added at the doubled scale).
RingTensor encode_fixed(const RealTensor& x, const FixedPointConfig& cfg, int scale);

double decode_scalar(std::uint64_t w, const FixedPointConfig& cfg, int scale);
RealTensor decode_fixed(const RingTensor& t);
RealTensor decode_fixed(const RingTensor& t, int scale);

enum class RingOp { kAdd, kSub, kMul };

/// Exact elementwise modular arithmetic; `b` may be a single-element tensor that broadcasts.
RingTensor ring_elementwise(RingOp op, const RingTensor& a, const RingTensor& b);
RingTensor ring_add(const RingTensor& a, const RingTensor& b);
RingTensor ring_sub(const RingTensor& a, const RingTensor& b);
RingTensor ring_mul(const RingTensor& a, const RingTensor& b);

/// Arithmetic right shift of the signed interpretation: floor(signed(a) / 2^shift).
std::uint64_t truncate_word(std::uint64_t w, int shift, const FixedPointConfig& cfg);
RingTensor truncate_signed(const RingTensor& a, int shift);
WordTensor truncate_signed(const WordTensor& a, int shift, const FixedPointConfig& cfg);

/// Masks every word in place to the ring.
void reduce_in_place(WordTensor& t, const FixedPointConfig& cfg);

// RTV1 serialization: "RTV1", bitwidth (u8), scale (u8), rank (u8), extents (u32 LE), words (u64 LE).
std::string serialize(const RingTensor& t);
RingTensor deserialize_ring(std::string_view bytes);
void write_ring_file(const std::string& path, const RingTensor& t);
RingTensor read_ring_file(const std::string& path);

}  // namespace xconv
