#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "xconv/errors.hpp"

namespace xconv::secure {

// Opcode registry.
enum class Opcode : std::uint16_t {
  kOpenMasked = 1,  // masked shares opened by both parties
  kOpenOutput = 2,  // model owner's output share sent to the client
  kSync = 3,
  kAbort = 4,
  kHandshake = 5,
  kMaterial = 6,  // dealer <-> party
};

const char* to_string(Opcode op);
bool known_opcode(std::uint16_t op);

inline constexpr std::size_t kHeaderBytes = 10;  // u32 length, u16 opcode, u32 layer tag
inline constexpr std::size_t kMaxFrameWords = std::size_t{1} << 20;

struct Frame {
  Opcode opcode = Opcode::kSync;
  std::uint32_t tag = 0;
  std::vector<std::uint64_t> payload;
};

/// Header plus little-endian payload words.
std::string encode_frame(const Frame& frame);
/// Parses a header; throws TransportError on unknown opcodes or lengths that are not whole words.
Frame decode_header(std::string_view header, std::uint32_t* payload_bytes);

/// Ordered, reliable frame transport between two endpoints.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const Frame& frame) = 0;
  /// Blocks for the next frame; throws TransportError when the peer is gone.
  virtual Frame recv() = 0;
  virtual void close() {}
};

/// In-process channel pair (two threads of one process).
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> memory_channel_pair();

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};
/// Parses "host:port" (host defaults to 127.0.0.1 for ":port").
Endpoint parse_endpoint(const std::string& text);

class TcpChannel : public Channel {
 public:
  explicit TcpChannel(int fd);
  ~TcpChannel() override;
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  /// Connects, retrying until timeout_ms elapses.
  static std::unique_ptr<TcpChannel> connect(const Endpoint& ep, int timeout_ms = 15000);

  void send(const Frame& frame) override;
  Frame recv() override;
  void close() override;

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& ep);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Waits up to timeout_ms for one connection.
  std::unique_ptr<TcpChannel> accept(int timeout_ms = 30000);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace xconv::secure
