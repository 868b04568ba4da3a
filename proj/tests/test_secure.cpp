#include <gtest/gtest.h>

#include <future>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "xconv/cells.hpp"
#include "xconv/cost.hpp"
#include "xconv/rewrite.hpp"
#include "xconv/secure/runtime.hpp"
#include "xconv/winograd.hpp"
#include "xconv/zoo.hpp"

namespace xconv::secure {
namespace {

using xconv::testing::floor_shift;
using xconv::testing::i128;
using xconv::testing::to_word;

template <typename T>
struct PairRun {
  std::array<T, 2> out;
  std::array<CommLedger, 2> ledgers;
  std::array<std::string, 2> transcripts;
};

// Runs f(party) for both parties over an in-memory channel with seed-expanded material.
template <typename F>
auto run_pair(const FixedPointConfig& cfg, std::uint64_t seed, MaterialRequirements capacity, F f) {
  using T = decltype(f(std::declval<Party&>()));
  PairRun<T> run;
  auto [c0, c1] = memory_channel_pair();
  GeneratedMaterial m0(0, cfg, seed, capacity), m1(1, cfg, seed, capacity);
  auto task = [&](int id, Channel& ch, MaterialSource& m) {
    Party p(id, ch, m, run.ledgers[id]);
    try {
      run.out[id] = f(p);
    } catch (...) {
      ch.close();
      throw;
    }
    run.transcripts[id] = p.transcript_digest();
  };
  auto fut = std::async(std::launch::async, task, 0, std::ref(*c0), std::ref(m0));
  std::exception_ptr err;
  try {
    task(1, *c1, m1);
  } catch (...) {
    err = std::current_exception();
  }
  fut.get();
  if (err) std::rethrow_exception(err);
  return run;
}

constexpr MaterialRequirements kPlenty{1 << 16, 1 << 16, 1 << 16};

std::vector<std::uint64_t> random_words(std::size_t n, std::mt19937_64& gen, const FixedPointConfig& cfg) {
  std::vector<std::uint64_t> v(n);
  for (auto& w : v) w = gen() & cfg.mask();
  return v;
}

// Splits clear words into (party0, party1) shares.
std::array<std::vector<std::uint64_t>, 2> split(const std::vector<std::uint64_t>& x, std::mt19937_64& gen,
                                                const FixedPointConfig& cfg) {
  std::array<std::vector<std::uint64_t>, 2> s{random_words(x.size(), gen, cfg), {}};
  for (std::size_t i = 0; i < x.size(); ++i) s[1].push_back(cfg.reduce(x[i] - s[0][i]));
  return s;
}

std::vector<std::uint64_t> join(const std::array<std::vector<std::uint64_t>, 2>& s, const FixedPointConfig& cfg) {
  std::vector<std::uint64_t> out(s[0].size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfg.reduce(s[0][i] + s[1][i]);
  return out;
}

TEST(Sharing, ReconstructsAndEncodesOne) {
  FixedPointConfig cfg;
  Prg prg(session_key(1));
  RealTensor x({3});
  x[0] = 1.0, x[1] = -2.5, x[2] = 0.0;
  const auto enc = encode_fixed(x, cfg);
  EXPECT_EQ(enc[0], 8388608u);
  auto [s0, s1] = share(enc, prg);
  EXPECT_EQ(s0.party, 0);
  EXPECT_EQ(s1.party, 1);
  EXPECT_EQ(reconstruct(s0, s1), enc);
  s1.scale = 2 * cfg.scale;
  EXPECT_THROW(reconstruct(s0, s1), MismatchError);
}

TEST(Sharing, SingleShareLooksUniform) {
  // Shares of a constant: the top 4 bits of each share fall in 16 bins uniformly.
  FixedPointConfig cfg;
  Prg prg(session_key(2));
  RingTensor x(WordTensor::constant({16000}, encode_scalar(0.75, cfg, cfg.scale)), cfg);
  auto [s0, s1] = share(x, prg);
  for (const auto* s : {&s0, &s1}) {
    std::array<double, 16> bins{};
    for (auto w : s->share.words().values()) bins[w >> (cfg.bitwidth - 4)] += 1;
    double chi2 = 0;
    for (double b : bins) chi2 += (b - 1000.0) * (b - 1000.0) / 1000.0;
    EXPECT_LT(chi2, 37.7);  // 15 dof, p = 0.001
  }
}

TEST(Beaver, MultipliesExactly) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(3);
  auto x = random_words(2000, gen, cfg), y = random_words(2000, gen, cfg);
  x[0] = std::uint64_t{1} << 46;
  y[0] = std::uint64_t{1} << 13;
  const auto xs = split(x, gen, cfg), ys = split(y, gen, cfg);
  auto run = run_pair(cfg, 3, kPlenty, [&](Party& p) { return beaver_mul(p, xs[p.id()], ys[p.id()], {"l", 1, "fc"}); });
  const auto z = join(run.out, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(z[i], cfg.reduce(x[i] * y[i]));
  EXPECT_EQ(z[0], std::uint64_t{1} << 59);
  for (int id : {0, 1}) {
    const auto* e = run.ledgers[id].find("l", "fc");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->bytes_sent, 16u * x.size());
    EXPECT_EQ(e->bytes_recv, 16u * x.size());
    EXPECT_EQ(e->rounds, 1u);
  }
  EXPECT_TRUE(mirror_violation(run.ledgers[0], run.ledgers[1]).empty());
}

TEST(Truncation, ExactFloorOnBoundedValues) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(4);
  const auto bound = cfg.activation_bound();
  std::vector<std::uint64_t> x;
  std::vector<std::int64_t> sx{std::int64_t{1} << 46, -1, 0, 1, -(std::int64_t{1} << 23), bound - 1, -bound + 1,
                               (std::int64_t{1} << 23) - 1, -(std::int64_t{1} << 23) - 1};
  std::uniform_int_distribution<std::int64_t> d(-bound + 1, bound - 1);
  while (sx.size() < 20000) sx.push_back(d(gen));
  for (auto v : sx) x.push_back(cfg.from_signed(v));
  const auto xs = split(x, gen, cfg);
  auto run = run_pair(cfg, 4, kPlenty, [&](Party& p) { return secure_truncate(p, xs[p.id()], {"l", 2, "trunc"}); });
  const auto z = join(run.out, cfg);
  for (std::size_t i = 0; i < x.size(); ++i)
    ASSERT_EQ(z[i], to_word(floor_shift(sx[i], cfg.scale), cfg.bitwidth)) << "x=" << sx[i];
  EXPECT_EQ(z[0], std::uint64_t{1} << 23);
  EXPECT_EQ(cfg.to_signed(z[1]), -1);
  EXPECT_TRUE(mirror_violation(run.ledgers[0], run.ledgers[1]).empty());
}

TEST(Relu, MillionValuesBitExact) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(5);
  const std::size_t n = 1000000;
  const auto bound = cfg.activation_bound();
  std::uniform_int_distribution<std::int64_t> d(-bound + 1, bound - 1);
  std::vector<std::uint64_t> x(n);
  for (auto& w : x) w = cfg.from_signed(d(gen));
  x[0] = 0;
  x[1] = cfg.from_signed(-1);
  x[2] = 1;
  x[3] = encode_scalar(1.0, cfg, cfg.scale);
  x[4] = encode_scalar(-1.0, cfg, cfg.scale);
  const auto xs = split(x, gen, cfg);
  MaterialRequirements cap{0, 0, n};
  auto run = run_pair(cfg, 5, cap, [&](Party& p) { return secure_relu(p, xs[p.id()], {"l", 3, "relu"}); });
  const auto z = join(run.out, cfg);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) bad += z[i] != fixed_relu(x[i], cfg);
  EXPECT_EQ(bad, 0u);
  EXPECT_EQ(z[0], 0u);
  EXPECT_EQ(z[1], 0u);
  EXPECT_EQ(z[2], 1u);
  EXPECT_EQ(z[3], x[3]);
  EXPECT_EQ(z[4], 0u);
}

TEST(Drelu, FullRingSign) {
  FixedPointConfig cfg{32, 8};
  std::mt19937_64 gen(6);
  auto x = random_words(5000, gen, cfg);
  x[0] = std::uint64_t{1} << 31;  // most negative
  x[1] = (std::uint64_t{1} << 31) - 1;
  const auto xs = split(x, gen, cfg);
  auto run = run_pair(cfg, 6, kPlenty, [&](Party& p) { return secure_drelu(p, xs[p.id()], {"l", 4, "relu"}); });
  const auto z = join(run.out, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(z[i], cfg.to_signed(x[i]) >= 0 ? 1u : 0u) << x[i];
}

TEST(MaxPool, ConstantAndKnownGrid) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(70);
  WordTensor c = WordTensor::constant({1, 1, 4, 4}, cfg.from_signed(-12345));
  WordTensor grid({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) grid[i] = cfg.from_signed((i * 7) % 16 - 8);
  for (const auto* x : {&c, &grid}) {
    const auto xs = split(std::vector<std::uint64_t>(x->values().begin(), x->values().end()), gen, cfg);
    auto run = run_pair(cfg, 70, kPlenty, [&](Party& p) {
      WordTensor mine(x->shape());
      std::copy(xs[p.id()].begin(), xs[p.id()].end(), mine.values().begin());
      return secure_maxpool(p, mine, PoolAttrs{2, 2, 0}, {"pool", 5, "maxpool"});
    });
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        std::int64_t best = INT64_MIN;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) best = std::max(best, cfg.to_signed((*x)(0, 0, 2 * i + dy, 2 * j + dx)));
        ASSERT_EQ(cfg.to_signed(cfg.reduce(run.out[0](0, 0, i, j) + run.out[1](0, 0, i, j))), best);
      }
  }
}

TEST(MaxPool, MatchesClearKernel) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(7);
  WordTensor x({1, 3, 7, 7});
  std::uniform_int_distribution<std::int64_t> d(-(1 << 30), 1 << 30);
  for (auto& w : x.values()) w = cfg.from_signed(d(gen));
  const auto xs = split(std::vector<std::uint64_t>(x.values().begin(), x.values().end()), gen, cfg);
  const PoolAttrs pool{3, 2, 1};
  auto run = run_pair(cfg, 7, kPlenty, [&](Party& p) {
    WordTensor mine(x.shape());
    std::copy(xs[p.id()].begin(), xs[p.id()].end(), mine.values().begin());
    return secure_maxpool(p, mine, pool, {"pool", 5, "maxpool"});
  });
  const auto expect = fixed_maxpool(x, pool, cfg);
  ASSERT_EQ(run.out[0].shape(), expect.shape());
  for (std::int64_t i = 0; i < expect.size(); ++i) ASSERT_EQ(cfg.reduce(run.out[0][i] + run.out[1][i]), expect[i]);
}

WordTensor tensor_share(const WordTensor& x, std::mt19937_64& gen, const FixedPointConfig& cfg, int party,
                        std::uint64_t salt) {
  std::mt19937_64 g(salt);
  WordTensor s(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const auto r = g() & cfg.mask();
    s[i] = party == 0 ? r : cfg.reduce(x[i] - r);
  }
  (void)gen;
  return s;
}

TEST(Conv, DeltaFilterScalesInput) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(8);
  WordTensor x({1, 2, 6, 6});
  for (auto& w : x.values()) w = cfg.from_signed(static_cast<std::int64_t>(gen() % 20001) - 10000);
  WordTensor w({2, 2, 3, 3});
  const auto one = encode_scalar(1.0, cfg, cfg.scale);
  w(0, 0, 1, 1) = one;
  w(1, 1, 1, 1) = one;
  const ConvAttrs conv{2, 2, 3, 1, 1, 1};
  auto run = run_pair(cfg, 8, kPlenty, [&](Party& p) {
    // the model owner holds the filter, the client a zero share of it
    const WordTensor wmine = p.id() == 0 ? w : WordTensor(w.shape());
    return secure_conv2d(p, tensor_share(x, gen, cfg, p.id(), 99), wmine, conv, {"conv", 6, "conv"});
  });
  for (std::int64_t i = 0; i < x.size(); ++i) ASSERT_EQ(cfg.reduce(run.out[0][i] + run.out[1][i]), cfg.reduce(x[i] * one));
  // every padded position still consumes a triple
  const auto* e = run.ledgers[0].find("conv", "conv");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->bytes_sent, 16u * 36 * 2 * 2 * 9);
}

TEST(Conv, MatchesClearRingConvolution) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(9);
  for (int groups : {1, 2}) {
    const ConvAttrs conv{4, 4, 3, 2, 1, groups};
    WordTensor x({1, 4, 7, 7}), w({4, 4 / groups, 3, 3});
    for (auto& v : x.values()) v = gen() & cfg.mask();
    for (auto& v : w.values()) v = gen() & cfg.mask();
    auto expect = conv2d(x, w, ConvParams{2, 1, groups});
    reduce_in_place(expect, cfg);
    auto run = run_pair(cfg, 9, kPlenty, [&](Party& p) {
      return secure_conv2d(p, tensor_share(x, gen, cfg, p.id(), 5), tensor_share(w, gen, cfg, p.id(), 6), conv,
                           {"conv", 7, "conv"});
    });
    for (std::int64_t i = 0; i < expect.size(); ++i)
      ASSERT_EQ(cfg.reduce(run.out[0][i] + run.out[1][i]), expect[i]);
    EXPECT_EQ(run.ledgers[0].find("conv", "conv")->bytes_sent, 16u * 16 * 4 * (4 / groups) * 9);
  }
}

TEST(Winograd, TriplesEqualBetaTwoAndTransformsAreFree) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(10);
  const ConvAttrs conv{1, 1, 3, 1, 1, 1, true, 6};
  WordTensor x({1, 1, 8, 8});
  for (auto& v : x.values()) v = cfg.from_signed(static_cast<std::int64_t>(gen() % 2001) - 1000);
  RealTensor filter({1, 1, 3, 3});
  for (auto& v : filter.values()) v = static_cast<double>(gen() % 5) - 2.0;
  const auto u = encode_fixed(winograd_filter_transform(filter, winograd_basis_for_tile(6, 3)), cfg).words();
  MaterialRequirements cap{144, 0, 0};
  auto run = run_pair(cfg, 10, cap, [&](Party& p) {
    const WordTensor umine = p.id() == 0 ? u : WordTensor(u.shape());
    return secure_winograd_conv2d(p, tensor_share(x, gen, cfg, p.id(), 7), umine, conv, {"wconv", 8, "winograd-mul"});
  });
  const auto beta2 = mult_counts(8, 3, 6).beta2;
  EXPECT_EQ(beta2, 144);
  const auto expect = winograd_conv2d_fixed(x, u, conv, 6, cfg);
  for (std::int64_t i = 0; i < expect.size(); ++i) ASSERT_EQ(cfg.reduce(run.out[0][i] + run.out[1][i]), expect[i]);
  for (int id : {0, 1}) {
    const auto& l = run.ledgers[id];
    ASSERT_NE(l.find("wconv", "winograd-mul"), nullptr);
    EXPECT_EQ(l.find("wconv", "winograd-mul")->bytes_sent, 16u * beta2);
    for (const char* op : {"winograd-input", "winograd-output"}) {
      const auto* e = l.find("wconv", op);
      ASSERT_NE(e, nullptr) << op;
      EXPECT_EQ(e->bytes_sent + e->bytes_recv, 0u) << op;
    }
  }
}

TEST(FullyConnected, MatchesClear) {
  FixedPointConfig cfg;
  std::mt19937_64 gen(11);
  WordTensor x({2, 6}), w({3, 6});
  for (auto& v : x.values()) v = gen() & cfg.mask();
  for (auto& v : w.values()) v = gen() & cfg.mask();
  auto expect = fully_connected(x, w);
  reduce_in_place(expect, cfg);
  auto run = run_pair(cfg, 11, kPlenty, [&](Party& p) {
    return secure_fully_connected(p, tensor_share(x, gen, cfg, p.id(), 1), tensor_share(w, gen, cfg, p.id(), 2),
                                  {"fc", 9, "fc"});
  });
  for (std::int64_t i = 0; i < expect.size(); ++i) ASSERT_EQ(cfg.reduce(run.out[0][i] + run.out[1][i]), expect[i]);
  EXPECT_EQ(run.ledgers[1].find("fc", "fc")->bytes_sent, 16u * 36);
}

Graph local_ops_graph() {
  GraphBuilder b({1, 4, 6, 6});
  auto c = b.conv("input", 4, 3, 1, 1);
  auto s = b.shuffle(c, {2, 3, 0, 1});
  auto sl = b.slice(s, 0, 2);
  auto sl2 = b.slice(s, 2, 4);
  auto cat = b.concat({sl2, sl});
  auto a = b.add(cat, c);
  auto p = b.avgpool(a, 1, 2);
  Graph g = std::move(b).finish(p, GraphInfo{});
  g.info.weight_seed = 17;
  return g;
}

TEST(Runtime, LocalOpsCostNothing) {
  Graph g = local_ops_graph();
  std::mt19937_64 gen(12);
  const auto x = encode_fixed(xconv::testing::random_real(g.input_shape, gen), g.info.fixed);
  const auto session = run_in_process(g, x, 12);
  EXPECT_EQ(session.output, infer_fixed(compile_fixed(g), x));
  for (const auto& ledger : session.ledgers) {
    int local = 0;
    for (const auto& e : ledger.entries()) {
      if (e.op == "shuffle" || e.op == "slice" || e.op == "concat" || e.op == "add" || e.op == "subsample") {
        ++local;
        EXPECT_EQ(e.bytes_sent + e.bytes_recv, 0u) << e.layer << "/" << e.op;
        EXPECT_EQ(e.rounds, 0u);
      }
    }
    EXPECT_EQ(local, 6);
  }
}

TEST(Runtime, ToynetBitwiseEqualAndLedgerConsistent) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  const auto program = compile_fixed(g);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto x = random_input(g.input_shape, g.info.fixed, seed);
    const auto session = run_in_process(g, x, seed);
    EXPECT_EQ(session.output, infer_fixed(program, x)) << "seed " << seed;
    EXPECT_TRUE(mirror_violation(session.ledgers[0], session.ledgers[1]).empty());
    // linear layers: 16 bytes per multiplication per party
    for (const auto& c : count_mults(fold_batchnorm(g))) {
      if (c.mults == 0) continue;
      const auto* e = session.ledgers[0].find(c.layer, c.kind == LayerKind::kConv2d ? "conv" : "fc");
      ASSERT_NE(e, nullptr) << c.layer;
      EXPECT_EQ(e->bytes_sent, 16u * static_cast<std::uint64_t>(c.mults));
    }
  }
}

TEST(Runtime, WinogradAndCellsBitwiseEqual) {
  std::vector<Graph> graphs{rewrite_winograd(model_zoo("toynet", CellVariant::kDense, 16)).graph};
  for (auto v : {CellVariant::kFactorized, CellVariant::kShuffle, CellVariant::kXOp})
    graphs.push_back(cell_graph(v, CellDims{4, 4, 8, 3, 1, true, false}, 8, 21, CellOptions{true, true}));
  for (const auto& g : graphs) {
    const auto x = random_input(g.input_shape, g.info.fixed, 4);
    const auto session = run_in_process(g, x, 4);
    EXPECT_EQ(session.output, infer_fixed(compile_fixed(g), x)) << g.info.variant;
  }
}

TEST(Runtime, TranscriptDeterministic) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  const auto x = random_input(g.input_shape, g.info.fixed, 8);
  const auto a = run_in_process(g, x, 8);
  const auto b = run_in_process(g, x, 8);
  const auto c = run_in_process(g, x, 9);
  EXPECT_EQ(a.transcripts, b.transcripts);
  EXPECT_NE(a.transcripts[0], c.transcripts[0]);
  EXPECT_EQ(a.ledgers[0].to_csv(), b.ledgers[0].to_csv());
}

TEST(Runtime, MaterialExhaustionDetected) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  auto need = material_requirements(fold_batchnorm(g));
  need.comparisons -= 1;
  const auto x = random_input(g.input_shape, g.info.fixed, 1);
  EXPECT_THROW(run_in_process(g, x, 1, need), MaterialError);
}

TEST(Runtime, MaterialFromDealerFiles) {
  Graph g = model_zoo("toynet", CellVariant::kDense, 16);
  const auto req = material_requirements(fold_batchnorm(g));
  const auto& cfg = g.info.fixed;
  std::array<std::string, 2> bytes{material_bytes(0, cfg, 31, req), material_bytes(1, cfg, 31, req)};
  const auto x = random_input(g.input_shape, cfg, 31);
  auto session = run_in_process(g, x, 31, [&](int party, const FixedPointConfig&) {
    return std::make_unique<BufferMaterial>(bytes[party]);
  });
  EXPECT_EQ(session.output, infer_fixed(compile_fixed(g), x));
  EXPECT_EQ(session.transcripts, run_in_process(g, x, 31).transcripts);

  bytes[1][40] ^= 1;
  EXPECT_THROW(BufferMaterial{bytes[1]}, MaterialError);
}

TEST(Handshake, MismatchesRejected) {
  FixedPointConfig cfg;
  auto attempt = [&](SessionParams a, SessionParams b) {
    auto [c0, c1] = memory_channel_pair();
    CommLedger l0, l1;
    auto fut = std::async(std::launch::async, [&] { handshake(*c0, 0, a, l0); });
    bool client_threw = false;
    try {
      handshake(*c1, 1, b, l1);
    } catch (const HandshakeError&) {
      client_threw = true;
    }
    bool owner_threw = false;
    try {
      fut.get();
    } catch (const HandshakeError&) {
      owner_threw = true;
    }
    return client_threw && owner_threw;
  };
  SessionParams base{kProtocolVersion, std::string(64, 'a'), cfg, 5};
  EXPECT_FALSE(attempt(base, base));
  auto other = base;
  other.seed = 6;
  EXPECT_TRUE(attempt(base, other));
  other = base;
  other.graph_hash = std::string(64, 'b');
  EXPECT_TRUE(attempt(base, other));
  other = base;
  other.cfg.scale = 20;
  EXPECT_TRUE(attempt(base, other));
  other = base;
  other.version = 2;
  EXPECT_TRUE(attempt(base, other));
}

TEST(Dealer, DeterministicAndConsistent) {
  FixedPointConfig cfg;
  MaterialRequirements req{64, 32, 32};
  const auto p0 = material_bytes(0, cfg, 77, req), p1 = material_bytes(1, cfg, 77, req);
  EXPECT_EQ(p0, material_bytes(0, cfg, 77, req));
  EXPECT_NE(p0, material_bytes(0, cfg, 78, req));
  EXPECT_EQ(p0.substr(0, 4), "DLR1");
  BufferMaterial m0(p0), m1(p1);
  EXPECT_EQ(m0.party(), 0);
  EXPECT_EQ(m1.party(), 1);
  EXPECT_EQ(m0.seed_tag(), seed_tag(77));
  EXPECT_EQ(m0.capacity(), req);

  std::vector<std::uint64_t> a, b;
  m0.take(Stream::kTriples, 64, a);
  m1.take(Stream::kTriples, 64, b);
  for (int t = 0; t < 64; ++t) {
    const auto x = cfg.reduce(a[3 * t] + b[3 * t]), y = cfg.reduce(a[3 * t + 1] + b[3 * t + 1]);
    ASSERT_EQ(cfg.reduce(a[3 * t + 2] + b[3 * t + 2]), cfg.reduce(x * y));
  }
  EXPECT_THROW(m0.take(Stream::kTriples, 1, a), MaterialError);

  const auto layout = tuple_layout(Stream::kTruncation, cfg);
  m0.take(Stream::kTruncation, 32, a);
  m1.take(Stream::kTruncation, 32, b);
  for (int t = 0; t < 32; ++t) {
    const auto* u = a.data() + t * layout.words;
    const auto* v = b.data() + t * layout.words;
    const auto r = cfg.reduce(u[0] + v[0]);
    ASSERT_EQ(u[1] ^ v[1], r);
    ASSERT_EQ(cfg.reduce(u[2] + v[2]), r >> cfg.scale);
    ASSERT_EQ(cfg.reduce(u[3] + v[3]), r >> (cfg.bitwidth - 1));
  }

  // generated and buffered material agree word for word
  GeneratedMaterial g0(0, cfg, 77, req);
  BufferMaterial again(p0);
  for (auto s : {Stream::kTriples, Stream::kTruncation, Stream::kComparison}) {
    std::vector<std::uint64_t> x, y;
    g0.take(s, req.count(s), x);
    again.take(s, req.count(s), y);
    EXPECT_EQ(x, y) << to_string(s);
  }
}

TEST(Dealer, ComparisonWidths) {
  EXPECT_EQ(comparison_and_widths(59), (std::vector<int>{60, 30, 16, 8, 4, 1}));
  EXPECT_EQ(comparison_and_widths(23), (std::vector<int>{24, 12, 6, 4, 1}));
}

TEST(Wire, FrameCodec) {
  Frame f{Opcode::kOpenMasked, 0xdeadbeef, {1, 2, 0xffffffffffffffffull}};
  const auto bytes = encode_frame(f);
  ASSERT_EQ(bytes.size(), kHeaderBytes + 24);
  std::uint32_t len = 0;
  const auto h = decode_header(std::string_view(bytes).substr(0, kHeaderBytes), &len);
  EXPECT_EQ(len, 24u);
  EXPECT_EQ(h.opcode, Opcode::kOpenMasked);
  EXPECT_EQ(h.tag, 0xdeadbeefu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[kHeaderBytes]), 1);  // little endian

  auto bad = bytes;
  bad[4] = 99;
  EXPECT_THROW(decode_header(std::string_view(bad).substr(0, kHeaderBytes), &len), TransportError);
  bad = bytes;
  bad[0] = 5;  // not a whole word
  EXPECT_THROW(decode_header(std::string_view(bad).substr(0, kHeaderBytes), &len), TransportError);
  EXPECT_FALSE(known_opcode(0));
  EXPECT_TRUE(known_opcode(6));
}

TEST(Wire, TcpRoundTrip) {
  TcpListener listener(Endpoint{"127.0.0.1", 0});
  const auto port = listener.port();
  auto fut = std::async(std::launch::async, [port] {
    auto ch = TcpChannel::connect(Endpoint{"127.0.0.1", port});
    ch->send(Frame{Opcode::kSync, 3, {42, 43}});
    return ch->recv().payload;
  });
  auto server = listener.accept();
  auto f = server->recv();
  EXPECT_EQ(f.payload, (std::vector<std::uint64_t>{42, 43}));
  EXPECT_EQ(f.tag, 3u);
  server->send(Frame{Opcode::kSync, 4, {7}});
  EXPECT_EQ(fut.get(), (std::vector<std::uint64_t>{7}));
  server->close();
}

TEST(Wire, EndpointParsing) {
  const auto a = parse_endpoint(":9000");
  EXPECT_EQ(a.host, "127.0.0.1");
  EXPECT_EQ(a.port, 9000);
  const auto b = parse_endpoint("localhost:1");
  EXPECT_EQ(b.host, "localhost");
  EXPECT_THROW(parse_endpoint("nope"), Error);
}

TEST(Wire, ClosedPeerRaisesTransport) {
  auto [a, b] = memory_channel_pair();
  a->close();
  EXPECT_THROW(b->recv(), TransportError);
}

TEST(Bits, PackRoundTrip) {
  std::mt19937_64 gen(13);
  for (int width : {1, 4, 24, 60, 64}) {
    std::vector<std::uint64_t> v(257);
    const auto mask = width == 64 ? ~0ull : (1ull << width) - 1;
    for (auto& x : v) x = gen() & mask;
    const auto packed = pack_bits(v, width);
    EXPECT_EQ(packed.size(), (v.size() * width + 63) / 64);
    EXPECT_EQ(unpack_bits(packed, v.size(), width), v);
  }
}

TEST(Ledger, CsvRoundTrip) {
  CommLedger l;
  l.entry("a", "conv").bytes_sent = 10;
  l.entry("a", "trunc").bytes_recv = 3;
  l.entry("b", "add");
  const auto back = CommLedger::from_csv(l.to_csv());
  EXPECT_EQ(back.to_csv(), l.to_csv());
  EXPECT_EQ(back.layer_bytes("a"), 13u);
  EXPECT_THROW(CommLedger::from_csv("x\n"), ParseError);
  EXPECT_THROW(CommLedger::from_csv("layer,op,bytes_sent,bytes_recv,rounds\na,b,1\n"), ParseError);
}

}  // namespace
}  // namespace xconv::secure
