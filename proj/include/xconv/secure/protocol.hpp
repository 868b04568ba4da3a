#pragma once

#include <sodium.h>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xconv/fixed_point.hpp"
#include "xconv/graph.hpp"
#include "xconv/rng.hpp"
#include "xconv/secure/dealer.hpp"
#include "xconv/secure/ledger.hpp"
#include "xconv/secure/wire.hpp"

namespace xconv::secure {

/// One party's additive share of a ring tensor, tagged with its fractional bits.
struct ShareTensor {
  int party = 0;
  RingTensor share;
  int scale = 0;
};

/// Uniform share for party 0, the difference for party 1.
std::pair<ShareTensor, ShareTensor> share(const RingTensor& x, Prg& rng);
/// Throws MismatchError when the shares disagree on shape, config or scale.
RingTensor reconstruct(const ShareTensor& s0, const ShareTensor& s1);

/// Ledger attribution of a protocol step: layer name, layer tag on the wire, op kind.
struct OpContext {
  std::string layer;
  std::uint32_t tag = 0;
  std::string op;
};

/// Protocol endpoint of one party: framing, chunking, accounting and the running transcript.
class Party {
 public:
  Party(int id, Channel& channel, MaterialSource& material, CommLedger& ledger);

  int id() const { return id_; }
  bool leader() const { return id_ == 0; }
  const FixedPointConfig& cfg() const { return material_.config(); }
  MaterialSource& material() { return material_; }
  CommLedger& ledger() { return ledger_; }

  /// Both parties send `mine` and receive the peer's words of equal length, in one round.
  std::vector<std::uint64_t> exchange(std::span<const std::uint64_t> mine, const OpContext& ctx);
  /// One-directional transfer.
  void send(Opcode op, std::span<const std::uint64_t> words, const OpContext& ctx);
  std::vector<std::uint64_t> recv(Opcode op, std::size_t words, const OpContext& ctx);
  /// Records a free step so it shows in the ledger with 0 bytes.
  void note_local(const OpContext& ctx) { ledger_.entry(ctx.layer, ctx.op); }

  /// Best-effort abort notice to the peer.
  void abort(int code) noexcept;

  /// Hex BLAKE2b over every frame sent and received, in order.
  std::string transcript_digest() const;

 private:
  void send_frames(Opcode op, std::span<const std::uint64_t> words, const OpContext& ctx);
  void recv_frames(Opcode op, std::span<std::uint64_t> out, const OpContext& ctx);
  void absorb(char direction, const Frame& frame);

  int id_;
  Channel& channel_;
  MaterialSource& material_;
  CommLedger& ledger_;
  crypto_generichash_state transcript_;
};

// Share-level protocols. Inputs and outputs are this party's words, masked to the ring.

/// Elementwise x * y with one triple per element; 16 payload bytes per element per party.
std::vector<std::uint64_t> beaver_mul(Party& p, std::span<const std::uint64_t> x, std::span<const std::uint64_t> y,
                                      const OpContext& ctx);

/// Exact arithmetic right shift by the configured scale of values in (-2^(l-2), 2^(l-2)).
std::vector<std::uint64_t> secure_truncate(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx);

/// Arithmetic shares of [signed(x) >= 0] for any ring value.
std::vector<std::uint64_t> secure_drelu(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx,
                                        std::vector<std::uint64_t>* tuples = nullptr);
std::vector<std::uint64_t> secure_relu(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx);

/// m = w0, then m += relu(w_j - m) over the window; bitwise equal to fixed_maxpool.
WordTensor secure_maxpool(Party& p, const WordTensor& x, const PoolAttrs& pool, const OpContext& ctx);

/// Direct convolution on shares, pre-truncation and without bias; one triple per scalar product.
WordTensor secure_conv2d(Party& p, const WordTensor& x, const WordTensor& w, const ConvAttrs& conv,
                         const OpContext& ctx);
/// Winograd-tagged convolution: local B/A transforms, one triple per elementwise product.
WordTensor secure_winograd_conv2d(Party& p, const WordTensor& x, const WordTensor& u, const ConvAttrs& conv,
                                  const OpContext& ctx);
WordTensor secure_fully_connected(Party& p, const WordTensor& x, const WordTensor& w, const OpContext& ctx);

/// Bit packing used for boolean openings.
std::vector<std::uint64_t> pack_bits(std::span<const std::uint64_t> values, int width);
std::vector<std::uint64_t> unpack_bits(std::span<const std::uint64_t> words, std::size_t count, int width);

}  // namespace xconv::secure
