#include "xconv/secure/protocol.hpp"

#include <algorithm>

#include "xconv/ops.hpp"
#include "xconv/winograd.hpp"

namespace xconv::secure {
namespace {

using Words = std::vector<std::uint64_t>;

constexpr std::size_t kMulChunk = std::size_t{1} << 19;  // d and e together fill one frame

std::uint64_t width_mask(int w) { return w >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << w) - 1; }

// Bits start, start + 2, ... of v, packed into h low bits.
std::uint64_t every_other(std::uint64_t v, int start, int h) {
  std::uint64_t out = 0;
  for (int j = 0; j < h; ++j) out |= ((v >> (2 * j + start)) & 1) << j;
  return out;
}

Words open_arith(Party& p, std::span<const std::uint64_t> mine, const OpContext& ctx) {
  Words peer = p.exchange(mine, ctx);
  const auto& cfg = p.cfg();
  for (std::size_t i = 0; i < peer.size(); ++i) peer[i] = cfg.reduce(peer[i] + mine[i]);
  return peer;
}

Words open_bits(Party& p, std::span<const std::uint64_t> mine, int width, const OpContext& ctx) {
  const Words packed = pack_bits(mine, width);
  const Words peer = unpack_bits(p.exchange(packed, ctx), mine.size(), width);
  Words out(mine.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mine[i] ^ peer[i];
  return out;
}

// XOR shares (bit 0) of [r > z] on the low k bits, for public z and XOR-shared r. Prefix
// comparison: G marks "r greater from here down", E "equal from here down"; pairs of adjacent
// positions merge level by level with one AND layer each.
Words greater_than_public(Party& p, std::span<const std::uint64_t> z, std::span<const std::uint64_t> r_bits, int k,
                          std::span<const std::uint64_t> tuples, const TupleLayout& layout, const OpContext& ctx) {
  const std::size_t n = z.size();
  const auto kmask = width_mask(k);
  const bool p0 = p.leader();
  Words g(n), e(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nz = ~z[i] & kmask;
    const auto r = r_bits[i] & kmask;
    g[i] = r & nz;
    e[i] = r ^ (p0 ? nz : 0);
  }
  Words d(n), f(n), a(n), b(n), c(n);
  int w = k;
  std::size_t level = 0;
  while (w > 1) {
    if (w % 2) {
      if (p0)
        for (auto& v : e) v |= std::uint64_t{1} << w;
      ++w;
    }
    const int h = w / 2;
    const bool last = h == 1;
    const int width = layout.widths.at(level);
    const auto wm = width_mask(width);
    const std::size_t off = layout.levels_offset + 3 * level;
    Words ghi(n);
    for (std::size_t i = 0; i < n; ++i) {
      ghi[i] = every_other(g[i], 1, h);
      const auto glo = every_other(g[i], 0, h);
      const auto ehi = every_other(e[i], 1, h);
      const auto elo = every_other(e[i], 0, h);
      const auto x = last ? ehi : ehi | (ehi << h);
      const auto y = last ? glo : glo | (elo << h);
      const auto* t = tuples.data() + i * layout.words + off;
      a[i] = t[0];
      b[i] = t[1];
      c[i] = t[2];
      d[i] = (x ^ a[i]) & wm;
      f[i] = (y ^ b[i]) & wm;
    }
    Words both(2 * n);
    std::copy(d.begin(), d.end(), both.begin());
    std::copy(f.begin(), f.end(), both.begin() + static_cast<std::ptrdiff_t>(n));
    const Words opened = open_bits(p, both, width, ctx);
    const auto hmask = width_mask(h);
    for (std::size_t i = 0; i < n; ++i) {
      const auto dd = opened[i], ff = opened[n + i];
      const auto prod = (c[i] ^ (dd & b[i]) ^ (ff & a[i]) ^ (p0 ? dd & ff : 0)) & wm;
      g[i] = ghi[i] ^ (prod & hmask);
      e[i] = last ? 0 : prod >> h;
    }
    w = h;
    ++level;
  }
  for (auto& v : g) v &= 1;
  return g;
}

// Arithmetic shares of XOR-shared bits, through a dealer bit with both sharings.
Words bit_to_arith(Party& p, std::span<const std::uint64_t> bits, std::span<const std::uint64_t> tuples,
                   const TupleLayout& layout, const OpContext& ctx) {
  const std::size_t n = bits.size();
  Words masked(n);
  for (std::size_t i = 0; i < n; ++i) masked[i] = (bits[i] ^ tuples[i * layout.words + layout.b2a_offset]) & 1;
  const Words u = open_bits(p, masked, 1, ctx);
  const auto& cfg = p.cfg();
  Words out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto beta = tuples[i * layout.words + layout.b2a_offset + 1];
    out[i] = u[i] ? cfg.reduce((p.leader() ? 1 : 0) - beta) : beta;
  }
  return out;
}

Words mul_with(Party& p, std::span<const std::uint64_t> x, std::span<const std::uint64_t> y, const std::uint64_t* triples,
               std::size_t stride, const OpContext& ctx) {
  const std::size_t n = x.size();
  const auto& cfg = p.cfg();
  Words de(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* t = triples + i * stride;
    de[i] = cfg.reduce(x[i] - t[0]);
    de[n + i] = cfg.reduce(y[i] - t[1]);
  }
  const Words opened = open_arith(p, de, ctx);
  Words z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* t = triples + i * stride;
    const auto d = opened[i], e = opened[n + i];
    z[i] = cfg.reduce(t[2] + d * t[1] + e * t[0] + (p.leader() ? d * e : 0));
  }
  return z;
}

// Collects (x, w) share pairs destined for output accumulators and multiplies them in batches.
class ProductStream {
 public:
  ProductStream(Party& p, std::span<std::uint64_t> out, const OpContext& ctx) : p_(p), out_(out), ctx_(ctx) {
    xs_.reserve(kMulChunk);
    ws_.reserve(kMulChunk);
    idx_.reserve(kMulChunk);
  }

  void add(std::uint64_t x, std::uint64_t w, std::size_t index) {
    xs_.push_back(x);
    ws_.push_back(w);
    idx_.push_back(index);
    if (xs_.size() == kMulChunk) flush();
  }

  void flush() {
    if (xs_.empty()) return;
    const Words z = beaver_mul(p_, xs_, ws_, ctx_);
    for (std::size_t i = 0; i < z.size(); ++i) out_[idx_[i]] += z[i];
    xs_.clear();
    ws_.clear();
    idx_.clear();
  }

 private:
  Party& p_;
  std::span<std::uint64_t> out_;
  const OpContext& ctx_;
  Words xs_, ws_;
  std::vector<std::size_t> idx_;
};

}  // namespace

std::pair<ShareTensor, ShareTensor> share(const RingTensor& x, Prg& rng) {
  const auto& cfg = x.config();
  WordTensor s0(x.shape()), s1(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    s0[i] = rng.next() & cfg.mask();
    s1[i] = cfg.reduce(x[i] - s0[i]);
  }
  return {ShareTensor{0, RingTensor(std::move(s0), cfg), cfg.scale},
          ShareTensor{1, RingTensor(std::move(s1), cfg), cfg.scale}};
}

RingTensor reconstruct(const ShareTensor& s0, const ShareTensor& s1) {
  if (s0.share.shape() != s1.share.shape() || s0.share.config() != s1.share.config() || s0.scale != s1.scale) {
    throw MismatchError("shares disagree on shape, ring or scale");
  }
  return ring_add(s0.share, s1.share);
}

Party::Party(int id, Channel& channel, MaterialSource& material, CommLedger& ledger)
    : id_(id), channel_(channel), material_(material), ledger_(ledger) {
  if (id != 0 && id != 1) throw UnsupportedError("party must be 0 or 1");
  if (material.party() != id) {
    throw MaterialError("dealer material belongs to party " + std::to_string(material.party()) + ", not party " +
                        std::to_string(id));
  }
  crypto_generichash_init(&transcript_, nullptr, 0, 32);
}

void Party::absorb(char direction, const Frame& frame) {
  const std::string bytes = encode_frame(frame);
  crypto_generichash_update(&transcript_, reinterpret_cast<const unsigned char*>(&direction), 1);
  crypto_generichash_update(&transcript_, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

void Party::send_frames(Opcode op, std::span<const std::uint64_t> words, const OpContext& ctx) {
  auto& e = ledger_.entry(ctx.layer, ctx.op);
  std::size_t pos = 0;
  do {
    const std::size_t n = std::min(kMaxFrameWords, words.size() - pos);
    Frame f{op, ctx.tag, Words(words.begin() + static_cast<std::ptrdiff_t>(pos),
                               words.begin() + static_cast<std::ptrdiff_t>(pos + n))};
    absorb('>', f);
    channel_.send(f);
    e.bytes_sent += 8 * n;
    e.header_bytes_sent += kHeaderBytes;
    ++e.messages;
    pos += n;
  } while (pos < words.size());
}

void Party::recv_frames(Opcode op, std::span<std::uint64_t> out, const OpContext& ctx) {
  auto& e = ledger_.entry(ctx.layer, ctx.op);
  std::size_t pos = 0;
  do {
    Frame f = channel_.recv();
    if (f.opcode == Opcode::kAbort) {
      throw TransportError("peer aborted" + (f.payload.empty() ? std::string() : " with code " + std::to_string(f.payload[0])));
    }
    if (f.opcode != op || f.tag != ctx.tag) {
      throw TransportError("protocol desync at layer '" + ctx.layer + "': expected " + to_string(op) + " tag " +
                           std::to_string(ctx.tag) + ", got " + to_string(f.opcode) + " tag " + std::to_string(f.tag));
    }
    const std::size_t expect = std::min(kMaxFrameWords, out.size() - pos);
    if (f.payload.size() != expect) {
      throw TransportError("protocol desync at layer '" + ctx.layer + "': frame of " +
                           std::to_string(f.payload.size()) + " words, expected " + std::to_string(expect));
    }
    absorb('<', f);
    std::copy(f.payload.begin(), f.payload.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
    e.bytes_recv += 8 * expect;
    pos += expect;
  } while (pos < out.size());
}

Words Party::exchange(std::span<const std::uint64_t> mine, const OpContext& ctx) {
  Words peer(mine.size());
  if (leader()) {
    send_frames(Opcode::kOpenMasked, mine, ctx);
    recv_frames(Opcode::kOpenMasked, peer, ctx);
  } else {
    recv_frames(Opcode::kOpenMasked, peer, ctx);
    send_frames(Opcode::kOpenMasked, mine, ctx);
  }
  ++ledger_.entry(ctx.layer, ctx.op).rounds;
  return peer;
}

void Party::send(Opcode op, std::span<const std::uint64_t> words, const OpContext& ctx) {
  send_frames(op, words, ctx);
  ++ledger_.entry(ctx.layer, ctx.op).rounds;
}

Words Party::recv(Opcode op, std::size_t words, const OpContext& ctx) {
  Words out(words);
  recv_frames(op, out, ctx);
  ++ledger_.entry(ctx.layer, ctx.op).rounds;
  return out;
}

void Party::abort(int code) noexcept {
  try {
    channel_.send(Frame{Opcode::kAbort, 0, {static_cast<std::uint64_t>(code)}});
  } catch (...) {
  }
}

std::string Party::transcript_digest() const {
  crypto_generichash_state copy = transcript_;
  unsigned char digest[32];
  crypto_generichash_final(&copy, digest, sizeof digest);
  char hex[65];
  sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
  return hex;
}

std::vector<std::uint64_t> pack_bits(std::span<const std::uint64_t> values, int width) {
  const auto wm = width_mask(width);
  Words out((values.size() * static_cast<std::size_t>(width) + 63) / 64);
  std::size_t bit = 0;
  for (auto v : values) {
    v &= wm;
    const std::size_t word = bit / 64, off = bit % 64;
    out[word] |= v << off;
    if (off + static_cast<std::size_t>(width) > 64 && off) out[word + 1] |= v >> (64 - off);
    bit += static_cast<std::size_t>(width);
  }
  return out;
}

std::vector<std::uint64_t> unpack_bits(std::span<const std::uint64_t> words, std::size_t count, int width) {
  const auto wm = width_mask(width);
  if (words.size() * 64 < count * static_cast<std::size_t>(width)) throw TransportError("short bit-packed payload");
  Words out(count);
  std::size_t bit = 0;
  for (auto& v : out) {
    const std::size_t word = bit / 64, off = bit % 64;
    v = words[word] >> off;
    if (off + static_cast<std::size_t>(width) > 64 && off) v |= words[word + 1] << (64 - off);
    v &= wm;
    bit += static_cast<std::size_t>(width);
  }
  return out;
}

std::vector<std::uint64_t> beaver_mul(Party& p, std::span<const std::uint64_t> x, std::span<const std::uint64_t> y,
                                      const OpContext& ctx) {
  if (x.size() != y.size()) throw ShapeError("beaver_mul: operand sizes differ");
  Words out(x.size()), triples;
  for (std::size_t pos = 0; pos < x.size(); pos += kMulChunk) {
    const std::size_t n = std::min(kMulChunk, x.size() - pos);
    p.material().take(Stream::kTriples, n, triples);
    const Words z = mul_with(p, x.subspan(pos, n), y.subspan(pos, n), triples.data(), 3, ctx);
    std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return out;
}

// With x' = x + 2^(l-2) >= 0 and z = x' + r opened: x' >> s = z_hi - r_hi - [z_lo < r_lo]
// + wrap * 2^(l-s), where wrap = msb(r) * (1 - msb(z)).
std::vector<std::uint64_t> secure_truncate(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx) {
  const auto& cfg = p.cfg();
  const int l = cfg.bitwidth, s = cfg.scale;
  const std::size_t n = x.size();
  const auto layout = tuple_layout(Stream::kTruncation, cfg);
  Words tuples;
  p.material().take(Stream::kTruncation, n, tuples);
  const auto bias = std::uint64_t{1} << (l - 2);
  Words masked(n), r_bits(n), z_lo(n);
  for (std::size_t i = 0; i < n; ++i) {
    masked[i] = cfg.reduce(x[i] + (p.leader() ? bias : 0) + tuples[i * layout.words]);
  }
  const Words z = open_arith(p, masked, ctx);
  const auto lo_mask = width_mask(s);
  for (std::size_t i = 0; i < n; ++i) {
    r_bits[i] = tuples[i * layout.words + 1] & lo_mask;
    z_lo[i] = z[i] & lo_mask;
  }
  const Words borrow = bit_to_arith(p, greater_than_public(p, z_lo, r_bits, s, tuples, layout, ctx), tuples, layout, ctx);
  Words out(n);
  const auto unbias = bias >> s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* t = tuples.data() + i * layout.words;
    const bool z_msb = (z[i] >> (l - 1)) & 1;
    std::uint64_t v = (p.leader() ? (z[i] >> s) - unbias : 0) - t[2] - borrow[i];
    if (!z_msb) v += t[3] << (l - s);
    out[i] = cfg.reduce(v);
  }
  return out;
}

// msb(x) = msb(z) ^ msb(r) ^ [r_lo > z_lo] for z = x + r.
std::vector<std::uint64_t> secure_drelu(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx,
                                        std::vector<std::uint64_t>* tuples_out) {
  const auto& cfg = p.cfg();
  const int l = cfg.bitwidth;
  const std::size_t n = x.size();
  const auto layout = tuple_layout(Stream::kComparison, cfg);
  Words local;
  Words& tuples = tuples_out ? *tuples_out : local;
  p.material().take(Stream::kComparison, n, tuples);
  Words masked(n), r_lo(n), z_lo(n);
  for (std::size_t i = 0; i < n; ++i) masked[i] = cfg.reduce(x[i] + tuples[i * layout.words]);
  const Words z = open_arith(p, masked, ctx);
  const auto lo_mask = width_mask(l - 1);
  for (std::size_t i = 0; i < n; ++i) {
    r_lo[i] = tuples[i * layout.words + 1] & lo_mask;
    z_lo[i] = z[i] & lo_mask;
  }
  Words t = greater_than_public(p, z_lo, r_lo, l - 1, tuples, layout, ctx);
  for (std::size_t i = 0; i < n; ++i) t[i] ^= (tuples[i * layout.words + 1] >> (l - 1)) & 1;
  Words ta = bit_to_arith(p, t, tuples, layout, ctx);
  for (std::size_t i = 0; i < n; ++i) {
    const bool z_msb = (z[i] >> (l - 1)) & 1;
    if (!z_msb) ta[i] = cfg.reduce((p.leader() ? 1 : 0) - ta[i]);
  }
  return ta;
}

std::vector<std::uint64_t> secure_relu(Party& p, std::span<const std::uint64_t> x, const OpContext& ctx) {
  Words tuples;
  const Words drelu = secure_drelu(p, x, ctx, &tuples);
  const auto layout = tuple_layout(Stream::kComparison, p.cfg());
  return mul_with(p, x, drelu, tuples.data() + layout.mult_offset, layout.words, ctx);
}

WordTensor secure_maxpool(Party& p, const WordTensor& x, const PoolAttrs& pool, const OpContext& ctx) {
  const auto& cfg = p.cfg();
  Shape shape;
  const auto windows = pool_windows(x.shape(), pool.window, pool.stride, pool.pad, &shape);
  WordTensor out(shape);
  const std::size_t n = windows.size();
  for (std::size_t i = 0; i < n; ++i) out[static_cast<std::int64_t>(i)] = x[windows[i][0]];
  const std::size_t steps = windows.empty() ? 0 : windows[0].size();
  Words diff(n);
  for (std::size_t j = 1; j < steps; ++j) {
    for (std::size_t i = 0; i < n; ++i) diff[i] = cfg.reduce(x[windows[i][j]] - out[static_cast<std::int64_t>(i)]);
    const Words r = secure_relu(p, diff, ctx);
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = out[static_cast<std::int64_t>(i)];
      m = cfg.reduce(m + r[i]);
    }
  }
  return out;
}

WordTensor secure_conv2d(Party& p, const WordTensor& x, const WordTensor& w, const ConvAttrs& conv,
                         const OpContext& ctx) {
  const auto& cfg = p.cfg();
  const auto batch = x.dim(0), c_in = x.dim(1);
  const int k = conv.kernel, stride = conv.stride, groups = conv.groups;
  if (c_in != conv.in_channels || w.dim(0) != conv.out_channels || w.dim(1) != c_in / groups) {
    throw ShapeError("layer '" + ctx.layer + "': conv operand shapes do not match the layer");
  }
  const auto ho = conv_out_extent(x.dim(2), k, stride, conv.pad), wo = conv_out_extent(x.dim(3), k, stride, conv.pad);
  const WordTensor xp = pad2d(x, conv.pad, conv.pad);
  const std::int64_t cg = c_in / groups, og = conv.out_channels / groups;
  WordTensor out({batch, conv.out_channels, ho, wo});
  {
    ProductStream products(p, out.values(), ctx);
    std::size_t idx = 0;
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t o = 0; o < conv.out_channels; ++o) {
        const auto base = (o / og) * cg;
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox, ++idx)
            for (std::int64_t c = 0; c < cg; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  products.add(xp(b, base + c, oy * stride + ky, ox * stride + kx), w(o, c, ky, kx), idx);
                }
      }
    products.flush();
  }
  reduce_in_place(out, cfg);
  return out;
}

WordTensor secure_winograd_conv2d(Party& p, const WordTensor& x, const WordTensor& u, const ConvAttrs& conv,
                                  const OpContext& ctx) {
  const auto& cfg = p.cfg();
  const auto g = winograd_geometry(x.shape(), conv, conv.tile);
  const auto& basis = winograd_basis_for_tile(conv.tile, conv.kernel);
  check_winograd_headroom(basis, cfg);
  const auto nn = g.nn(), tiles = g.tiles(), cg = g.cg(), og = g.c_out / g.groups;
  if (u.shape() != Shape{nn, g.c_out, cg}) throw ShapeError("layer '" + ctx.layer + "': filter transform shape mismatch");

  const DynMatrix<std::uint64_t> bt = basis.BT_int.cast<std::uint64_t>();
  const DynMatrix<std::uint64_t> at = basis.AT_int.cast<std::uint64_t>();
  WordTensor v = winograd_input_transform<std::uint64_t>(x, g, bt);
  reduce_in_place(v, cfg);
  p.note_local(OpContext{ctx.layer, ctx.tag, "winograd-input"});

  WordTensor m({g.batch, nn, g.c_out, tiles});
  {
    ProductStream products(p, m.values(), ctx);
    for (std::int64_t b = 0; b < g.batch; ++b)
      for (std::int64_t e = 0; e < nn; ++e)
        for (std::int64_t o = 0; o < g.c_out; ++o) {
          const auto grp = o / og;
          const auto out_base = static_cast<std::size_t>(((b * nn + e) * g.c_out + o) * tiles);
          for (std::int64_t c = 0; c < cg; ++c) {
            const auto wv = u[(e * g.c_out + o) * cg + c];
            const auto in_base = ((b * nn + e) * g.c_in + grp * cg + c) * tiles;
            for (std::int64_t t = 0; t < tiles; ++t) products.add(v[in_base + t], wv, out_base + static_cast<std::size_t>(t));
          }
        }
    products.flush();
  }
  reduce_in_place(m, cfg);
  WordTensor y = winograd_output_transform<std::uint64_t>(m, g, at);
  reduce_in_place(y, cfg);
  p.note_local(OpContext{ctx.layer, ctx.tag, "winograd-output"});
  return y;
}

WordTensor secure_fully_connected(Party& p, const WordTensor& x, const WordTensor& w, const OpContext& ctx) {
  const auto batch = x.dim(0);
  const auto in = x.size() / batch, outs = w.dim(0);
  if (w.dim(1) != in) throw ShapeError("layer '" + ctx.layer + "': fully-connected operand shapes do not match");
  WordTensor out({batch, outs});
  {
    ProductStream products(p, out.values(), ctx);
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t o = 0; o < outs; ++o)
        for (std::int64_t i = 0; i < in; ++i) {
          products.add(x[b * in + i], w[o * in + i], static_cast<std::size_t>(b * outs + o));
        }
    products.flush();
  }
  reduce_in_place(out, p.cfg());
  return out;
}

}  // namespace xconv::secure
