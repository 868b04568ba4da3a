#include "xconv/secure/dealer.hpp"

#include <sodium.h>

#include <cstring>

#include "xconv/cost.hpp"
#include "xconv/io_util.hpp"

namespace xconv::secure {
namespace {

constexpr char kMagic[4] = {'D', 'L', 'R', '1'};
constexpr const char* kStreamLabels[kStreamCount] = {"triples", "truncation", "comparison"};

std::uint64_t width_mask(int w) { return w >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << w) - 1; }

// One tuple for `party`. The dealer's secret stream fixes the correlated values; the mask stream
// is party 0's share, and party 1 takes the difference, so both parties regenerate consistent
// shares without seeing each other's.
void generate_tuple(Stream s, int party, const FixedPointConfig& cfg, const TupleLayout& layout, Prg& secret,
                    Prg& mask, std::uint64_t* out) {
  const auto m = cfg.mask();
  const bool p0 = party == 0;
  auto arith = [&](std::uint64_t value) {
    const auto share0 = mask.next() & m;
    return p0 ? share0 : cfg.reduce(value - share0);
  };
  auto boolean = [&](std::uint64_t value, std::uint64_t wm) {
    const auto share0 = mask.next() & wm;
    return p0 ? share0 : (value ^ share0) & wm;
  };
  if (s == Stream::kTriples) {
    const auto a = secret.next() & m, b = secret.next() & m;
    out[0] = arith(a);
    out[1] = arith(b);
    out[2] = arith(cfg.reduce(a * b));
    return;
  }
  const auto r = secret.next() & m;
  std::size_t w = 0;
  out[w++] = arith(r);
  out[w++] = boolean(r, m);
  if (s == Stream::kTruncation) {
    out[w++] = arith(r >> cfg.scale);
    out[w++] = arith(r >> (cfg.bitwidth - 1));
  }
  for (int width : layout.widths) {
    const auto wm = width_mask(width);
    const auto a = secret.next() & wm, b = secret.next() & wm;
    out[w++] = boolean(a, wm);
    out[w++] = boolean(b, wm);
    out[w++] = boolean(a & b, wm);
  }
  const auto beta = secret.next() & 1;
  out[w++] = boolean(beta, 1);
  out[w++] = arith(beta);
  if (s == Stream::kComparison) {
    const auto a = secret.next() & m, b = secret.next() & m;
    out[w++] = arith(a);
    out[w++] = arith(b);
    out[w++] = arith(cfg.reduce(a * b));
  }
}

std::array<TupleLayout, kStreamCount> layouts_for(const FixedPointConfig& cfg) {
  return {tuple_layout(Stream::kTriples, cfg), tuple_layout(Stream::kTruncation, cfg),
          tuple_layout(Stream::kComparison, cfg)};
}

Seed stream_key(std::uint64_t seed, Stream s) {
  return derive(derive(session_key(seed), "dealer"), kStreamLabels[static_cast<int>(s)]);
}

void check_party(int party) {
  if (party != 0 && party != 1) throw UnsupportedError("party must be 0 or 1, got " + std::to_string(party));
}

}  // namespace

std::vector<int> comparison_and_widths(int k) {
  std::vector<int> widths;
  int w = k;
  while (w > 1) {
    if (w % 2) ++w;
    const int h = w / 2;
    widths.push_back(h == 1 ? 1 : 2 * h);
    w = h;
  }
  return widths;
}

const char* to_string(Stream s) { return kStreamLabels[static_cast<int>(s)]; }

std::uint64_t MaterialRequirements::count(Stream s) const {
  switch (s) {
    case Stream::kTriples: return triples;
    case Stream::kTruncation: return truncations;
    case Stream::kComparison: return comparisons;
  }
  return 0;
}

MaterialRequirements material_requirements(const Graph& graph) {
  MaterialRequirements req;
  for (const auto& c : count_mults(graph)) {
    req.triples += static_cast<std::uint64_t>(c.mults);
    req.truncations += static_cast<std::uint64_t>(c.truncations);
    req.comparisons += static_cast<std::uint64_t>(c.relus + c.comparisons);
  }
  return req;
}

TupleLayout tuple_layout(Stream s, const FixedPointConfig& cfg) {
  TupleLayout t;
  if (s == Stream::kTriples) {
    t.words = 3;
    return t;
  }
  const bool trunc = s == Stream::kTruncation;
  t.widths = comparison_and_widths(trunc ? cfg.scale : cfg.bitwidth - 1);
  t.levels_offset = trunc ? 4 : 2;
  t.b2a_offset = t.levels_offset + 3 * t.widths.size();
  t.words = t.b2a_offset + 2;
  if (!trunc) {
    t.mult_offset = t.words;
    t.words += 3;
  }
  return t;
}

GeneratedMaterial::GeneratedMaterial(int party, const FixedPointConfig& cfg, std::uint64_t seed,
                                     MaterialRequirements capacity)
    : party_(party), cfg_(cfg), capacity_(capacity), layouts_(layouts_for(cfg)) {
  check_party(party);
  cfg_.validate();
  for (int i = 0; i < kStreamCount; ++i) {
    const Seed key = stream_key(seed, static_cast<Stream>(i));
    secret_.emplace_back(derive(key, "secret"));
    mask_.emplace_back(derive(key, "mask"));
  }
}

void GeneratedMaterial::take(Stream s, std::uint64_t count, std::vector<std::uint64_t>& out) {
  const int i = static_cast<int>(s);
  if (cursor_[i] + count > capacity_.count(s)) {
    throw MaterialError(std::string("dealer material exhausted: ") + to_string(s) + " stream holds " +
                        std::to_string(capacity_.count(s)) + " tuples, need " + std::to_string(cursor_[i] + count));
  }
  const auto& layout = layouts_[i];
  out.resize(count * layout.words);
  for (std::uint64_t t = 0; t < count; ++t) {
    generate_tuple(s, party_, cfg_, layout, secret_[i], mask_[i], out.data() + t * layout.words);
  }
  cursor_[i] += count;
}

std::uint64_t seed_tag(std::uint64_t seed) {
  const auto c = commit(seed);
  return load_le<std::uint64_t>(c.data());
}

std::string material_bytes(int party, const FixedPointConfig& cfg, std::uint64_t seed,
                           const MaterialRequirements& req) {
  check_party(party);
  GeneratedMaterial gen(party, cfg, seed, req);
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(party));
  out.push_back(static_cast<char>(cfg.bitwidth));
  out.push_back(static_cast<char>(cfg.scale));
  put_le<std::uint64_t>(out, seed_tag(seed));
  for (int i = 0; i < kStreamCount; ++i) put_le<std::uint64_t>(out, req.count(static_cast<Stream>(i)));
  std::vector<std::uint64_t> words;
  constexpr std::uint64_t kBatch = 1 << 14;
  for (int i = 0; i < kStreamCount; ++i) {
    const auto s = static_cast<Stream>(i);
    for (std::uint64_t done = 0; done < req.count(s); done += kBatch) {
      gen.take(s, std::min(kBatch, req.count(s) - done), words);
      for (auto w : words) put_le<std::uint64_t>(out, w);
    }
  }
  unsigned char digest[32];
  crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(out.data()), out.size(), nullptr, 0);
  out.append(reinterpret_cast<const char*>(digest), sizeof digest);
  return out;
}

std::array<std::string, 2> write_material_files(const std::string& prefix, const FixedPointConfig& cfg,
                                                std::uint64_t seed, const MaterialRequirements& req) {
  std::array<std::string, 2> paths{prefix + ".p0.dlr", prefix + ".p1.dlr"};
  for (int p = 0; p < 2; ++p) write_file(paths[p], material_bytes(p, cfg, seed, req));
  return paths;
}

BufferMaterial::BufferMaterial(std::string bytes) : bytes_(std::move(bytes)) {
  constexpr std::size_t kFixed = 4 + 3 + 8 + 8 * kStreamCount;
  if (bytes_.size() < kFixed + 32 || std::memcmp(bytes_.data(), kMagic, 4) != 0) {
    throw MaterialError("dealer material: not a DLR1 blob");
  }
  const std::size_t body = bytes_.size() - 32;
  unsigned char digest[32];
  crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(bytes_.data()), body, nullptr, 0);
  if (sodium_memcmp(digest, bytes_.data() + body, 32) != 0) throw MaterialError("dealer material: checksum mismatch");
  try {
    ByteReader in(std::string_view(bytes_).substr(0, body), "dealer material");
    in.take(4);
    party_ = in.get<std::uint8_t>();
    cfg_.bitwidth = in.get<std::uint8_t>();
    cfg_.scale = in.get<std::uint8_t>();
    check_party(party_);
    cfg_.validate();
    seed_tag_ = in.get<std::uint64_t>();
    capacity_.triples = in.get<std::uint64_t>();
    capacity_.truncations = in.get<std::uint64_t>();
    capacity_.comparisons = in.get<std::uint64_t>();
    layouts_ = layouts_for(cfg_);
    std::size_t offset = in.position();
    for (int i = 0; i < kStreamCount; ++i) {
      offset_[i] = offset;
      offset += 8 * layouts_[i].words * capacity_.count(static_cast<Stream>(i));
    }
    if (offset != body) throw MaterialError("dealer material: stream sizes do not match the header");
  } catch (const Error& e) {
    if (dynamic_cast<const MaterialError*>(&e)) throw;
    throw MaterialError(std::string("dealer material: ") + e.what());
  }
}

void BufferMaterial::take(Stream s, std::uint64_t count, std::vector<std::uint64_t>& out) {
  const int i = static_cast<int>(s);
  if (cursor_[i] + count > capacity_.count(s)) {
    throw MaterialError(std::string("dealer material exhausted: ") + to_string(s) + " stream holds " +
                        std::to_string(capacity_.count(s)) + " tuples, need " + std::to_string(cursor_[i] + count));
  }
  const auto words = layouts_[i].words;
  out.resize(count * words);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + offset_[i] + 8 * cursor_[i] * words;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = load_le<std::uint64_t>(p + 8 * j);
  cursor_[i] += count;
}

}  // namespace xconv::secure
