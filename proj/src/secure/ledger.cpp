#include "xconv/secure/ledger.hpp"

#include <sstream>

#include "xconv/errors.hpp"

namespace xconv::secure {

LedgerEntry& CommLedger::entry(const std::string& layer, const std::string& op) {
  auto [it, fresh] = index_.try_emplace({layer, op}, entries_.size());
  if (fresh) {
    LedgerEntry e;
    e.layer = layer;
    e.op = op;
    entries_.push_back(std::move(e));
  }
  return entries_[it->second];
}

const LedgerEntry* CommLedger::find(const std::string& layer, const std::string& op) const {
  auto it = index_.find({layer, op});
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::uint64_t CommLedger::total_sent() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.bytes_sent;
  return t;
}

std::uint64_t CommLedger::total_recv() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.bytes_recv;
  return t;
}

std::uint64_t CommLedger::total_rounds() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.rounds;
  return t;
}

std::uint64_t CommLedger::layer_bytes(const std::string& layer) const {
  std::uint64_t t = 0;
  for (const auto& e : entries_)
    if (e.layer == layer) t += e.bytes_sent + e.bytes_recv;
  return t;
}

std::map<std::pair<std::string, std::string>, double> CommLedger::sent_by_op() const {
  std::map<std::pair<std::string, std::string>, double> out;
  for (const auto& e : entries_) out[{e.layer, e.op}] += static_cast<double>(e.bytes_sent);
  return out;
}

std::string CommLedger::to_csv() const {
  std::ostringstream out;
  out << "layer,op,bytes_sent,bytes_recv,rounds\n";
  for (const auto& e : entries_) {
    out << e.layer << ',' << e.op << ',' << e.bytes_sent << ',' << e.bytes_recv << ',' << e.rounds << '\n';
  }
  return out.str();
}

CommLedger CommLedger::from_csv(const std::string& text) {
  CommLedger ledger;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("layer,op,", 0) != 0) throw ParseError("ledger CSV: missing header");
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError("ledger CSV row " + std::to_string(row) + ": expected 5 columns");
    try {
      auto& e = ledger.entry(cells[0], cells[1]);
      e.bytes_sent = std::stoull(cells[2]);
      e.bytes_recv = std::stoull(cells[3]);
      e.rounds = std::stoull(cells[4]);
    } catch (const std::logic_error&) {
      throw ParseError("ledger CSV row " + std::to_string(row) + ": bad number");
    }
  }
  return ledger;
}

std::string mirror_violation(const CommLedger& party0, const CommLedger& party1) {
  auto check = [](const CommLedger& a, const CommLedger& b, const char* an, const char* bn) -> std::string {
    for (const auto& e : a.entries()) {
      const auto* other = b.find(e.layer, e.op);
      const std::uint64_t recv = other ? other->bytes_recv : 0;
      if (e.bytes_sent != recv) {
        return e.layer + "/" + e.op + ": " + an + " sent " + std::to_string(e.bytes_sent) + " but " + bn +
               " received " + std::to_string(recv);
      }
    }
    return {};
  };
  auto v = check(party0, party1, "party0", "party1");
  return v.empty() ? check(party1, party0, "party1", "party0") : v;
}

}  // namespace xconv::secure
