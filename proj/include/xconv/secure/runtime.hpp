#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "xconv/interpreter.hpp"
#include "xconv/secure/dealer.hpp"
#include "xconv/secure/ledger.hpp"
#include "xconv/secure/protocol.hpp"
#include "xconv/secure/wire.hpp"

namespace xconv::secure {

inline constexpr std::uint64_t kProtocolVersion = 1;

/// Public session parameters both parties must agree on.
struct SessionParams {
  std::uint64_t version = kProtocolVersion;
  std::string graph_hash;
  FixedPointConfig cfg;
  std::uint64_t seed = 0;
};

/// Exchanges session parameters; throws HandshakeError naming the first field that differs.
void handshake(Channel& channel, int party, const SessionParams& params, CommLedger& ledger);

struct PartyResult {
  std::optional<RingTensor> output;  // client only
  CommLedger ledger;
  std::string transcript;
};

/// Runs one party over an established channel. party 0 holds the model (program compiled with
/// weights); party 1 holds the input (program compiled without weights) and learns the output.
PartyResult run_party(int party, const FixedProgram& program, Channel& channel, MaterialSource& material,
                      std::uint64_t seed, const RingTensor* input = nullptr);

struct LocalSession {
  RingTensor output;
  std::array<CommLedger, 2> ledgers;
  std::array<std::string, 2> transcripts;
};

using MaterialFactory = std::function<std::unique_ptr<MaterialSource>(int party, const FixedPointConfig& cfg)>;

/// Both parties as threads of this process over an in-memory channel, with material expanded
/// from the seed. `capacity` overrides the material size (to exercise exhaustion).
LocalSession run_in_process(const Graph& graph, const RingTensor& input, std::uint64_t seed,
                            std::optional<MaterialRequirements> capacity = std::nullopt);
/// Same, with each party's material from `material`.
LocalSession run_in_process(const Graph& graph, const RingTensor& input, std::uint64_t seed,
                            const MaterialFactory& material);

/// Dealer process: serves each connecting party its DLR1 material, then returns.
void serve_dealer(TcpListener& listener, const FixedPointConfig& cfg, std::uint64_t seed,
                  const MaterialRequirements& req, int timeout_ms = 30000);
/// Party side of the dealer exchange; returns the DLR1 bytes.
std::string fetch_material(const Endpoint& dealer, int party, int timeout_ms = 15000);

/// Deterministic client input for a session seed: uniform in [-1, 1) at the configured scale.
RingTensor random_input(const Shape& shape, const FixedPointConfig& cfg, std::uint64_t seed);

}  // namespace xconv::secure
