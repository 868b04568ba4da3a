#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace xconv::secure {

struct LedgerEntry {
  std::string layer;
  std::string op;
  std::uint64_t bytes_sent = 0;  // payload only
  std::uint64_t bytes_recv = 0;
  std::uint64_t header_bytes_sent = 0;
  std::uint64_t messages = 0;  // frames sent
  std::uint64_t rounds = 0;
};

/// Per-(layer, op) communication of one party, in first-touch order.
class CommLedger {
 public:
  /// Creates the entry if needed, so free operations appear with 0 bytes.
  LedgerEntry& entry(const std::string& layer, const std::string& op);
  const LedgerEntry* find(const std::string& layer, const std::string& op) const;

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::uint64_t total_sent() const;
  std::uint64_t total_recv() const;
  std::uint64_t total_rounds() const;
  /// Payload bytes (sent + received) of one layer, every op.
  std::uint64_t layer_bytes(const std::string& layer) const;

  /// Sent bytes per (layer, op), the shape the cost profiler merges.
  std::map<std::pair<std::string, std::string>, double> sent_by_op() const;

  /// CSV: layer,op,bytes_sent,bytes_recv,rounds (message counts stay in memory)
  std::string to_csv() const;
  static CommLedger from_csv(const std::string& text);

 private:
  std::vector<LedgerEntry> entries_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

/// Empty when sent by one party equals received by the other for every entry; otherwise the
/// first offending entry.
std::string mirror_violation(const CommLedger& party0, const CommLedger& party1);

}  // namespace xconv::secure
