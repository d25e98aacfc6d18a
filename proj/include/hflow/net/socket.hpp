#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hflow::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a blocking operation exceeds its deadline.
class TimeoutError : public NetError {
 public:
  using NetError::NetError;
};

/// Raised when the remote side closed the connection.
class PeerClosed : public NetError {
 public:
  using NetError::NetError;
};

using Millis = std::chrono::milliseconds;
inline constexpr Millis kNoTimeout{-1};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  /// Parses "host:port". Throws std::invalid_argument on malformed input.
  static Endpoint parse(std::string_view text);
  std::string str() const;
};

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(other.release()) {}
  Fd& operator=(Fd&& other) noexcept;
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

/// Connected stream socket with a small read-ahead buffer for line reads.
class Socket {
 public:
  Socket() = default;
  explicit Socket(Fd fd) : fd_(std::move(fd)) {}

  bool valid() const { return fd_.valid(); }
  int native() const { return fd_.get(); }

  void send_all(std::span<const std::byte> data, Millis timeout = kNoTimeout);
  void send_all(std::string_view data, Millis timeout = kNoTimeout);

  /// Fills `out` completely; throws PeerClosed on EOF.
  void recv_exact(std::span<std::byte> out, Millis timeout = kNoTimeout);

  /// Reads through the next '\n' (not included). Throws NetError if the line
  /// exceeds `max_len` bytes.
  std::string read_line(std::size_t max_len, Millis timeout = kNoTimeout);

  /// Sends `out` to `sink` while filling `in` from `*this`, without either
  /// side blocking the other. Used by ring collectives.
  void exchange(Socket& sink, std::span<const std::byte> out, std::span<std::byte> in,
                Millis timeout);

  /// Half-closes both directions; wakes any thread blocked on this socket.
  void shutdown();
  void close() { fd_.reset(); }

  Endpoint local_endpoint() const;

 private:
  std::size_t take_buffered(std::span<std::byte> out);

  Fd fd_;
  std::string rbuf_;
  std::size_t rpos_ = 0;
};

class Listener {
 public:
  /// Binds and listens. Port 0 picks an ephemeral port.
  static Listener bind(const Endpoint& ep, int backlog = 128);

  Endpoint local_endpoint() const;
  /// Blocks until a connection arrives; returns std::nullopt after shutdown().
  std::optional<Socket> accept(Millis timeout = kNoTimeout);
  void shutdown();
  bool valid() const { return fd_.valid(); }

 private:
  Fd fd_;
};

Socket connect(const Endpoint& ep, Millis timeout = Millis{10'000});

}  // namespace hflow::net
