#include "xconv/secure/runtime.hpp"

#include <sodium.h>

#include <cstring>
#include <exception>
#include <thread>

#include "xconv/io_util.hpp"
#include "xconv/ops.hpp"

namespace xconv::secure {
namespace {

using Words = std::vector<std::uint64_t>;

Words hash_words(const std::string& hex) {
  unsigned char bin[32] = {};
  std::size_t len = 0;
  if (sodium_hex2bin(bin, sizeof bin, hex.data(), hex.size(), nullptr, &len, nullptr) != 0 || len != sizeof bin) {
    throw HandshakeError("graph hash '" + hex + "' is not 32 hex bytes");
  }
  Words out(4);
  for (int i = 0; i < 4; ++i) out[i] = load_le<std::uint64_t>(bin + 8 * i);
  return out;
}

Words handshake_payload(const SessionParams& p) {
  Words w{p.version};
  for (auto v : hash_words(p.graph_hash)) w.push_back(v);
  w.push_back(static_cast<std::uint64_t>(p.cfg.bitwidth));
  w.push_back(static_cast<std::uint64_t>(p.cfg.scale));
  const auto c = commit(p.seed);
  for (int i = 0; i < 4; ++i) w.push_back(load_le<std::uint64_t>(c.data() + 8 * i));
  return w;
}

const char* local_op(LayerKind kind) {
  switch (kind) {
    case LayerKind::kShuffle: return "shuffle";
    case LayerKind::kSlice: return "slice";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kAdd: return "add";
    case LayerKind::kAvgPool: return "subsample";
    default: return "local";
  }
}

void add_bias(Party& p, WordTensor& y, const WordTensor& bias, const OpContext& ctx) {
  if (p.leader()) {
    const auto channels = y.dim(1);
    const auto plane = y.size() / (y.dim(0) * channels);
    for (std::int64_t b = 0; b < y.dim(0); ++b)
      for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t j = 0; j < plane; ++j) y[(b * channels + c) * plane + j] += bias[c];
  }
  reduce_in_place(y, p.cfg());
  p.note_local(OpContext{ctx.layer, ctx.tag, "bias"});
}

WordTensor scale_public(Party& p, const WordTensor& x, std::uint64_t c, const OpContext& ctx) {
  WordTensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = p.cfg().reduce(x[i] * c);
  p.note_local(OpContext{ctx.layer, ctx.tag, "public-scale"});
  return out;
}

WordTensor truncate_tensor(Party& p, const WordTensor& y, const OpContext& ctx) {
  return WordTensor(y.shape(), Eigen::Map<const WordTensor::Storage>(
                                   secure_truncate(p, y.values(), OpContext{ctx.layer, ctx.tag, "trunc"}).data(),
                                   y.size()));
}

WordTensor secure_layer(Party& p, const FixedProgram& program, std::size_t i, const Layer& l,
                        const std::vector<const WordTensor*>& in) {
  const auto& cfg = program.cfg;
  const OpContext ctx{l.name, static_cast<std::uint32_t>(i), std::string(to_string(l.kind))};
  WordTensor y;
  if (local_layer(l, in, y, cfg.mask())) {
    p.note_local(OpContext{l.name, ctx.tag, local_op(l.kind)});
    return y;
  }
  const WordTensor& x = *in[0];
  const PreparedLayer& prep = program.layers[i];
  switch (l.kind) {
    case LayerKind::kConv2d:
      y = l.conv.winograd ? secure_winograd_conv2d(p, x, prep.weight, l.conv, OpContext{l.name, ctx.tag, "winograd-mul"})
                          : secure_conv2d(p, x, prep.weight, l.conv, OpContext{l.name, ctx.tag, "conv"});
      add_bias(p, y, prep.bias, ctx);
      break;
    case LayerKind::kFullyConnected: {
      y = secure_fully_connected(p, x, prep.weight, OpContext{l.name, ctx.tag, "fc"});
      const auto outs = y.dim(1);
      if (p.leader())
        for (std::int64_t j = 0; j < y.size(); ++j) y[j] += prep.bias[j % outs];
      reduce_in_place(y, cfg);
      p.note_local(OpContext{l.name, ctx.tag, "bias"});
      break;
    }
    case LayerKind::kRelu: {
      const Words r = secure_relu(p, x.values(), OpContext{l.name, ctx.tag, "relu"});
      return WordTensor(x.shape(), Eigen::Map<const WordTensor::Storage>(r.data(), x.size()));
    }
    case LayerKind::kMaxPool:
      return secure_maxpool(p, x, l.pool, OpContext{l.name, ctx.tag, "maxpool"});
    case LayerKind::kAvgPool:
      p.note_local(OpContext{l.name, ctx.tag, "avgpool-sum"});
      y = scale_public(p, window_sum(x, l.pool.window, l.pool.stride, l.pool.pad), prep.coefficient, ctx);
      break;
    case LayerKind::kGlobalAvgPool:
      p.note_local(OpContext{l.name, ctx.tag, "avgpool-sum"});
      y = scale_public(p, global_sum(x), prep.coefficient, ctx);
      break;
    default:
      throw UnsupportedError("layer '" + l.name + "': " + std::string(to_string(l.kind)) +
                             " has no secure kernel (fold batchnorm first)");
  }
  return truncate_tensor(p, y, ctx);
}

}  // namespace

void handshake(Channel& channel, int party, const SessionParams& params, CommLedger& ledger) {
  const Frame mine{Opcode::kHandshake, 0, handshake_payload(params)};
  auto& e = ledger.entry("session", "handshake");
  auto send = [&] {
    channel.send(mine);
    e.bytes_sent += 8 * mine.payload.size();
    e.header_bytes_sent += kHeaderBytes;
    ++e.messages;
  };
  Frame peer;
  auto recv = [&] {
    peer = channel.recv();
    if (peer.opcode == Opcode::kAbort) throw HandshakeError("peer aborted during the handshake");
    if (peer.opcode != Opcode::kHandshake) throw HandshakeError("expected a handshake frame");
    e.bytes_recv += 8 * peer.payload.size();
  };
  if (party == 0) {
    send();
    recv();
  } else {
    recv();
    send();
  }
  ++e.rounds;
  const auto& a = mine.payload;
  const auto& b = peer.payload;
  if (b.size() != a.size()) throw HandshakeError("handshake payload has " + std::to_string(b.size()) + " words");
  if (a[0] != b[0]) {
    throw HandshakeError("protocol version mismatch: " + std::to_string(a[0]) + " vs " + std::to_string(b[0]));
  }
  if (!std::equal(a.begin() + 1, a.begin() + 5, b.begin() + 1)) throw HandshakeError("graph hash mismatch");
  if (a[5] != b[5] || a[6] != b[6]) {
    throw HandshakeError("fixed-point config mismatch: l=" + std::to_string(a[5]) + ",s=" + std::to_string(a[6]) +
                         " vs l=" + std::to_string(b[5]) + ",s=" + std::to_string(b[6]));
  }
  if (!std::equal(a.begin() + 7, a.end(), b.begin() + 7)) throw HandshakeError("session seed commitment mismatch");
}

PartyResult run_party(int party, const FixedProgram& program, Channel& channel, MaterialSource& material,
                      std::uint64_t seed, const RingTensor* input) {
  PartyResult result;
  const auto& cfg = program.cfg;
  if (material.config() != cfg) throw MaterialError("dealer material was generated for another fixed-point config");
  const auto need = material_requirements(program.graph);
  const auto& have = material.capacity();
  for (int s = 0; s < kStreamCount; ++s) {
    const auto stream = static_cast<Stream>(s);
    if (have.count(stream) < need.count(stream)) {
      throw MaterialError(std::string("dealer material too small: ") + to_string(stream) + " stream holds " +
                          std::to_string(have.count(stream)) + " tuples, the graph needs " +
                          std::to_string(need.count(stream)));
    }
  }
  if (party == 1) {
    if (!input) throw UnsupportedError("the client needs an input");
    if (input->config() != cfg) throw ShapeError("input fixed-point config does not match the graph");
    if (input->shape() != program.graph.input_shape) {
      throw ShapeError("input shape " + xconv::to_string(input->shape()) + " does not match graph input " +
                       xconv::to_string(program.graph.input_shape));
    }
  }

  handshake(channel, party, SessionParams{kProtocolVersion, graph_hash(program.graph), cfg, seed}, result.ledger);
  Party p(party, channel, material, result.ledger);
  try {
    const auto& in_layer = program.graph.layers.front();
    p.note_local(OpContext{in_layer.name, 0, "share"});
    WordTensor x = party == 1 ? input->words() : WordTensor(program.graph.input_shape);
    WordTensor y = execute_graph<WordTensor>(
        program.graph, std::move(x),
        [&](std::size_t i, const Layer& l, const std::vector<const WordTensor*>& in) { return secure_layer(p, program, i, l, in); });

    const OpContext out_ctx{program.graph.output, static_cast<std::uint32_t>(program.graph.index_of(program.graph.output)),
                            "output"};
    if (party == 0) {
      p.send(Opcode::kOpenOutput, y.values(), out_ctx);
    } else {
      const Words peer = p.recv(Opcode::kOpenOutput, static_cast<std::size_t>(y.size()), out_ctx);
      for (std::int64_t j = 0; j < y.size(); ++j) y[j] = cfg.reduce(y[j] + peer[j]);
      result.output = RingTensor(std::move(y), cfg);
    }
  } catch (const Error& e) {
    if (e.code() != ExitCode::kTransport) p.abort(static_cast<int>(e.code()));
    throw;
  }
  result.transcript = p.transcript_digest();
  return result;
}

LocalSession run_in_process(const Graph& graph, const RingTensor& input, std::uint64_t seed,
                            std::optional<MaterialRequirements> capacity) {
  return run_in_process(graph, input, seed, [&](int party, const FixedPointConfig& cfg) {
    const auto req = capacity ? *capacity : material_requirements(fold_batchnorm(graph));
    return std::make_unique<GeneratedMaterial>(party, cfg, seed, req);
  });
}

LocalSession run_in_process(const Graph& graph, const RingTensor& input, std::uint64_t seed,
                            const MaterialFactory& make_material) {
  const FixedProgram model = compile_fixed(graph, true);
  const FixedProgram client = compile_fixed(graph, false);
  auto [c0, c1] = memory_channel_pair();
  std::array<std::exception_ptr, 2> errors;
  std::array<PartyResult, 2> results;
  auto body = [&](int party, Channel& ch) {
    try {
      const auto material = make_material(party, model.cfg);
      results[party] = run_party(party, party == 0 ? model : client, ch, *material, seed, party == 1 ? &input : nullptr);
    } catch (...) {
      errors[party] = std::current_exception();
      ch.close();
    }
  };
  std::thread t0(body, 0, std::ref(*c0));
  body(1, *c1);
  t0.join();
  // Surface the root cause rather than the peer's disconnect.
  for (auto& err : errors) {
    if (!err) continue;
    try {
      std::rethrow_exception(err);
    } catch (const TransportError&) {
    } catch (...) {
      throw;
    }
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  LocalSession s;
  s.output = std::move(*results[1].output);
  for (int i = 0; i < 2; ++i) {
    s.ledgers[i] = std::move(results[i].ledger);
    s.transcripts[i] = std::move(results[i].transcript);
  }
  return s;
}

void serve_dealer(TcpListener& listener, const FixedPointConfig& cfg, std::uint64_t seed,
                  const MaterialRequirements& req, int timeout_ms) {
  std::array<bool, 2> served{};
  while (!served[0] || !served[1]) {
    auto ch = listener.accept(timeout_ms);
    const Frame request = ch->recv();
    if (request.opcode != Opcode::kMaterial || request.payload.size() != 1 || request.payload[0] > 1) {
      throw TransportError("malformed material request");
    }
    const int party = static_cast<int>(request.payload[0]);
    if (served[party]) throw TransportError("party " + std::to_string(party) + " requested material twice");
    const std::string bytes = material_bytes(party, cfg, seed, req);
    ch->send(Frame{Opcode::kMaterial, 0, {bytes.size()}});
    Words chunk;
    for (std::size_t pos = 0; pos < bytes.size(); pos += 8 * kMaxFrameWords) {
      const std::size_t n = std::min(8 * kMaxFrameWords, bytes.size() - pos);
      chunk.assign((n + 7) / 8, 0);
      std::memcpy(chunk.data(), bytes.data() + pos, n);
      ch->send(Frame{Opcode::kMaterial, 0, chunk});
    }
    served[party] = true;
  }
}

std::string fetch_material(const Endpoint& dealer, int party, int timeout_ms) {
  auto ch = TcpChannel::connect(dealer, timeout_ms);
  ch->send(Frame{Opcode::kMaterial, 0, {static_cast<std::uint64_t>(party)}});
  const Frame head = ch->recv();
  if (head.opcode != Opcode::kMaterial || head.payload.size() != 1) throw MaterialError("malformed dealer reply");
  std::string bytes(head.payload[0], '\0');
  for (std::size_t pos = 0; pos < bytes.size();) {
    const Frame f = ch->recv();
    if (f.opcode != Opcode::kMaterial) throw MaterialError("unexpected frame from the dealer");
    const std::size_t n = std::min(8 * f.payload.size(), bytes.size() - pos);
    std::memcpy(bytes.data() + pos, f.payload.data(), n);
    pos += n;
  }
  return bytes;
}

RingTensor random_input(const Shape& shape, const FixedPointConfig& cfg, std::uint64_t seed) {
  Prg rng(derive(session_key(seed), "input"));
  RealTensor x(shape);
  for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
  return encode_fixed(x, cfg);
}

}  // namespace xconv::secure
