#include "xconv/fixed_point.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "xconv/io_util.hpp"

namespace xconv {

void FixedPointConfig::validate() const {
  if (!(2 <= scale && scale < bitwidth && bitwidth <= 64)) {
    throw UnsupportedError("fixed-point config requires 2 <= scale < bitwidth <= 64, got bitwidth=" +
                           std::to_string(bitwidth) + " scale=" + std::to_string(scale));
  }
}

RingTensor::RingTensor(WordTensor words, FixedPointConfig cfg) : words_(std::move(words)), cfg_(cfg) {
  reduce_in_place(words_, cfg_);
}

void reduce_in_place(WordTensor& t, const FixedPointConfig& cfg) {
  if (cfg.bitwidth == 64) return;
  const std::uint64_t m = cfg.mask();
  for (auto& w : t.values()) w &= m;
}

std::uint64_t encode_scalar(double x, const FixedPointConfig& cfg, int scale) {
  const double scaled = std::floor(std::ldexp(x, scale));
  const double limit = std::ldexp(1.0, cfg.bitwidth - 1);
  if (!std::isfinite(scaled) || scaled >= limit || scaled < -limit) {
    throw OverflowError("value " + std::to_string(x) + " is not representable with bitwidth " +
                        std::to_string(cfg.bitwidth) + " at scale " + std::to_string(scale));
  }
  return cfg.from_signed(static_cast<std::int64_t>(scaled));
}

RingTensor encode_fixed(const RealTensor& x, const FixedPointConfig& cfg, int scale) {
  cfg.validate();
  WordTensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = encode_scalar(x[i], cfg, scale);
  return RingTensor(std::move(out), cfg);
}

RingTensor encode_fixed(const RealTensor& x, const FixedPointConfig& cfg) {
  return encode_fixed(x, cfg, cfg.scale);
}

double decode_scalar(std::uint64_t w, const FixedPointConfig& cfg, int scale) {
  return std::ldexp(static_cast<double>(cfg.to_signed(w)), -scale);
}

RealTensor decode_fixed(const RingTensor& t, int scale) {
  RealTensor out(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) out[i] = decode_scalar(t[i], t.config(), scale);
  return out;
}

RealTensor decode_fixed(const RingTensor& t) { return decode_fixed(t, t.config().scale); }

RingTensor ring_elementwise(RingOp op, const RingTensor& a, const RingTensor& b) {
  if (!(a.config() == b.config())) throw ShapeError("ring operands use different fixed-point configs");
  const bool broadcast = b.size() == 1 && a.shape() != b.shape();
  if (!broadcast && a.shape() != b.shape()) {
    throw ShapeError("ring operand shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  WordTensor out(a.shape());
  const auto& x = a.words().data();
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const std::uint64_t y = broadcast ? b[0] : b[i];
    switch (op) {
      case RingOp::kAdd: out[i] = x[i] + y; break;
      case RingOp::kSub: out[i] = x[i] - y; break;
      case RingOp::kMul: out[i] = x[i] * y; break;
    }
  }
  return RingTensor(std::move(out), a.config());
}

RingTensor ring_add(const RingTensor& a, const RingTensor& b) { return ring_elementwise(RingOp::kAdd, a, b); }
RingTensor ring_sub(const RingTensor& a, const RingTensor& b) { return ring_elementwise(RingOp::kSub, a, b); }
RingTensor ring_mul(const RingTensor& a, const RingTensor& b) { return ring_elementwise(RingOp::kMul, a, b); }

std::uint64_t truncate_word(std::uint64_t w, int shift, const FixedPointConfig& cfg) {
  return cfg.from_signed(cfg.to_signed(w) >> shift);
}

WordTensor truncate_signed(const WordTensor& a, int shift, const FixedPointConfig& cfg) {
  if (shift < 0 || shift >= cfg.bitwidth) {
    throw UnsupportedError("truncation shift " + std::to_string(shift) + " out of range");
  }
  WordTensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = truncate_word(a[i], shift, cfg);
  return out;
}

RingTensor truncate_signed(const RingTensor& a, int shift) {
  return RingTensor(truncate_signed(a.words(), shift, a.config()), a.config());
}

std::string serialize(const RingTensor& t) {
  std::string out = "RTV1";
  out.push_back(static_cast<char>(t.config().bitwidth));
  out.push_back(static_cast<char>(t.config().scale));
  out.push_back(static_cast<char>(t.shape().size()));
  for (auto extent : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  for (auto w : t.words().values()) put_le<std::uint64_t>(out, w);
  return out;
}

RingTensor deserialize_ring(std::string_view bytes) {
  ByteReader in(bytes, "RTV1 tensor");
  if (in.take(4) != "RTV1") throw ParseError("RTV1 tensor: bad magic");
  FixedPointConfig cfg;
  cfg.bitwidth = in.get<std::uint8_t>();
  cfg.scale = in.get<std::uint8_t>();
  cfg.validate();
  const int rank = in.get<std::uint8_t>();
  Shape shape(rank);
  for (auto& extent : shape) extent = in.get<std::uint32_t>();
  WordTensor words(shape);
  for (auto& w : words.values()) {
    w = in.get<std::uint64_t>();
    if (w & ~cfg.mask()) throw ParseError("RTV1 tensor: word exceeds ring modulus");
  }
  if (!in.done()) throw ParseError("RTV1 tensor: trailing bytes");
  return RingTensor(std::move(words), cfg);
}

void write_ring_file(const std::string& path, const RingTensor& t) { write_file(path, serialize(t)); }

RingTensor read_ring_file(const std::string& path) { return deserialize_ring(read_file(path)); }

}  // namespace xconv
