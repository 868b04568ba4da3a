#include "xconv/secure/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "xconv/io_util.hpp"

namespace xconv::secure {

const char* to_string(Opcode op) {
  switch (op) {
    case Opcode::kOpenMasked: return "open-masked";
    case Opcode::kOpenOutput: return "open-output";
    case Opcode::kSync: return "sync";
    case Opcode::kAbort: return "abort";
    case Opcode::kHandshake: return "handshake";
    case Opcode::kMaterial: return "material";
  }
  return "?";
}

bool known_opcode(std::uint16_t op) { return op >= 1 && op <= 6; }

std::string encode_frame(const Frame& frame) {
  std::string out;
  out.reserve(kHeaderBytes + 8 * frame.payload.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(8 * frame.payload.size()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(frame.opcode));
  put_le<std::uint32_t>(out, frame.tag);
  for (auto w : frame.payload) put_le<std::uint64_t>(out, w);
  return out;
}

Frame decode_header(std::string_view header, std::uint32_t* payload_bytes) {
  if (header.size() != kHeaderBytes) throw TransportError("short frame header");
  const auto* p = reinterpret_cast<const unsigned char*>(header.data());
  const auto length = load_le<std::uint32_t>(p);
  const auto op = load_le<std::uint16_t>(p + 4);
  if (!known_opcode(op)) throw TransportError("unknown opcode " + std::to_string(op));
  if (length % 8 || length / 8 > kMaxFrameWords) throw TransportError("bad frame length " + std::to_string(length));
  Frame f;
  f.opcode = static_cast<Opcode>(op);
  f.tag = load_le<std::uint32_t>(p + 6);
  *payload_bytes = length;
  return f;
}

namespace {

struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Frame> frames;
  bool closed = false;
};

class MemoryChannel : public Channel {
 public:
  MemoryChannel(std::shared_ptr<Mailbox> in, std::shared_ptr<Mailbox> out) : in_(std::move(in)), out_(std::move(out)) {}
  ~MemoryChannel() override { close(); }

  void send(const Frame& frame) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw TransportError("peer closed the channel");
    out_->frames.push_back(frame);
    out_->cv.notify_all();
  }

  Frame recv() override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportError("peer disconnected");
    Frame f = std::move(in_->frames.front());
    in_->frames.pop_front();
    return f;
  }

  void close() override {
    for (auto* box : {in_.get(), out_.get()}) {
      std::lock_guard lock(box->mu);
      box->closed = true;
      box->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Mailbox> in_, out_;
};

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
}

void read_all(int fd, char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, data, n, 0);
    if (k == 0) throw TransportError("peer disconnected");
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
}

sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw TransportError("cannot resolve host '" + ep.host + "'");
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

}  // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> memory_channel_pair() {
  auto a = std::make_shared<Mailbox>(), b = std::make_shared<Mailbox>();
  return {std::make_unique<MemoryChannel>(a, b), std::make_unique<MemoryChannel>(b, a)};
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw UnsupportedError("endpoint '" + text + "' is not host:port");
  Endpoint ep;
  if (colon > 0) ep.host = text.substr(0, colon);
  try {
    const int port = std::stoi(text.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw UnsupportedError("endpoint '" + text + "' has an invalid port");
  }
  return ep;
}

TcpChannel::TcpChannel(int fd) : fd_(fd) {
  int one = 1;
  setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

TcpChannel::~TcpChannel() { close(); }

void TcpChannel::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<TcpChannel> TcpChannel::connect(const Endpoint& ep, int timeout_ms) {
  const auto addr = resolve(ep);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      return std::make_unique<TcpChannel>(fd);
    }
    const int err = errno;
    ::close(fd);
    if (std::chrono::steady_clock::now() > deadline) {
      throw TransportError("cannot connect to " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(err));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void TcpChannel::send(const Frame& frame) {
  if (fd_ < 0) throw TransportError("channel closed");
  const std::string bytes = encode_frame(frame);
  write_all(fd_, bytes.data(), bytes.size());
}

Frame TcpChannel::recv() {
  if (fd_ < 0) throw TransportError("channel closed");
  char header[kHeaderBytes];
  read_all(fd_, header, kHeaderBytes);
  std::uint32_t bytes = 0;
  Frame f = decode_header(std::string_view(header, kHeaderBytes), &bytes);
  std::string body(bytes, '\0');
  read_all(fd_, body.data(), bytes);
  f.payload.resize(bytes / 8);
  for (std::size_t i = 0; i < f.payload.size(); ++i) {
    f.payload[i] = load_le<std::uint64_t>(reinterpret_cast<const unsigned char*>(body.data()) + 8 * i);
  }
  return f;
}

TcpListener::TcpListener(const Endpoint& ep) {
  auto addr = resolve(ep);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
    const int err = errno;
    ::close(fd_);
    throw TransportError("cannot listen on " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(err));
  }
  socklen_t len = sizeof addr;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpChannel> TcpListener::accept(int timeout_ms) {
  pollfd pfd{fd_, POLLIN, 0};
  const int ready = ::poll(&pfd, 1, timeout_ms);
  if (ready <= 0) throw TransportError("no peer connected within " + std::to_string(timeout_ms) + " ms");
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw TransportError(std::string("accept: ") + std::strerror(errno));
  return std::make_unique<TcpChannel>(fd);
}

}  // namespace xconv::secure
