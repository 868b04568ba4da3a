#include "xconv/rng.hpp"

#include <sodium.h>

#include <stdexcept>
#include <string>

#include "xconv/io_util.hpp"

namespace xconv {
namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

}  // namespace

Seed session_key(std::uint64_t session_seed) {
  ensure_sodium();
  std::string msg = "xconv2pc/session/v1";
  put_le<std::uint64_t>(msg, session_seed);
  Seed out;
  crypto_generichash(out.bytes.data(), out.bytes.size(), reinterpret_cast<const unsigned char*>(msg.data()),
                     msg.size(), nullptr, 0);
  return out;
}

Seed derive(const Seed& parent, std::string_view label) {
  ensure_sodium();
  Seed out;
  crypto_generichash(out.bytes.data(), out.bytes.size(), reinterpret_cast<const unsigned char*>(label.data()),
                     label.size(), parent.bytes.data(), parent.bytes.size());
  return out;
}

Seed derive(const Seed& parent, std::string_view label, std::uint64_t index) {
  std::string msg(label);
  msg.push_back('#');
  put_le<std::uint64_t>(msg, index);
  return derive(parent, msg);
}

std::array<unsigned char, 32> commit(std::uint64_t session_seed) {
  return derive(session_key(session_seed), "commitment").bytes;
}

Prg::Prg(const Seed& key) : key_(key) { ensure_sodium(); }

void Prg::refill() {
  static const std::array<unsigned char, 512> zeros{};
  std::array<unsigned char, 512> raw;
  static const std::array<unsigned char, crypto_stream_chacha20_NONCEBYTES> nonce{};
  crypto_stream_chacha20_xor_ic(raw.data(), zeros.data(), raw.size(), nonce.data(), block_counter_,
                                key_.bytes.data());
  block_counter_ += raw.size() / 64;
  for (std::size_t i = 0; i < buffer_.size(); ++i) buffer_[i] = load_le<std::uint64_t>(raw.data() + 8 * i);
  pos_ = 0;
}

std::uint64_t Prg::next() {
  if (pos_ == buffer_.size()) refill();
  return buffer_[pos_++];
}

void Prg::fill(std::span<std::uint64_t> out) {
  for (auto& w : out) w = next();
}

std::uint64_t Prg::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Prg::below(0)");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next();
  } while (v >= limit);
  return v % n;
}

}  // namespace xconv
