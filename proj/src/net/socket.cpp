#include "hflow/net/socket.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace hflow::net {
namespace {

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

int poll_ms(Millis timeout) { return timeout.count() < 0 ? -1 : static_cast<int>(timeout.count()); }

// Waits for `events` on fd; false on timeout.
bool wait_for(int fd, short events, Millis timeout) {
  pollfd p{fd, events, 0};
  for (;;) {
    int rc = ::poll(&p, 1, poll_ms(timeout));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw NetError(errno_text("poll"));
  }
}

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  std::string host = ep.host.empty() || ep.host == "*" ? "0.0.0.0" : ep.host;
  if (host == "localhost") host = "127.0.0.1";
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw NetError("cannot resolve host '" + ep.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

Endpoint endpoint_of(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
    throw NetError(errno_text("getsockname"));
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
  return Endpoint{buf, ntohs(addr.sin_port)};
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 >= text.size())
    throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
  unsigned port = 0;
  auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535)
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
  return Endpoint{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Fd& Fd::operator=(Fd&& other) noexcept {
  if (this != &other) reset(other.release());
  return *this;
}

void Fd::reset(int fd) {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

void Socket::send_all(std::span<const std::byte> data, Millis timeout) {
  const auto* p = reinterpret_cast<const char*>(data.data());
  std::size_t left = data.size();
  while (left > 0) {
    if (timeout.count() >= 0 && !wait_for(fd_.get(), POLLOUT, timeout))
      throw TimeoutError("send timed out");
    ssize_t n = ::send(fd_.get(), p, left, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == EPIPE || errno == ECONNRESET) throw PeerClosed("peer closed connection");
      throw NetError(errno_text("send"));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

void Socket::send_all(std::string_view data, Millis timeout) {
  send_all(std::as_bytes(std::span(data.data(), data.size())), timeout);
}

std::size_t Socket::take_buffered(std::span<std::byte> out) {
  std::size_t avail = rbuf_.size() - rpos_;
  std::size_t n = std::min(avail, out.size());
  if (n > 0) {
    std::memcpy(out.data(), rbuf_.data() + rpos_, n);
    rpos_ += n;
    if (rpos_ == rbuf_.size()) {
      rbuf_.clear();
      rpos_ = 0;
    }
  }
  return n;
}

void Socket::recv_exact(std::span<std::byte> out, Millis timeout) {
  std::size_t got = take_buffered(out);
  while (got < out.size()) {
    if (timeout.count() >= 0 && !wait_for(fd_.get(), POLLIN, timeout))
      throw TimeoutError("receive timed out");
    ssize_t n = ::recv(fd_.get(), out.data() + got, out.size() - got, 0);
    if (n == 0) throw PeerClosed("peer closed connection");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) throw PeerClosed("connection reset by peer");
      throw NetError(errno_text("recv"));
    }
    got += static_cast<std::size_t>(n);
  }
}

std::string Socket::read_line(std::size_t max_len, Millis timeout) {
  for (;;) {
    auto nl = rbuf_.find('\n', rpos_);
    if (nl != std::string::npos) {
      std::string line = rbuf_.substr(rpos_, nl - rpos_);
      rpos_ = nl + 1;
      if (rpos_ == rbuf_.size()) {
        rbuf_.clear();
        rpos_ = 0;
      }
      return line;
    }
    if (rbuf_.size() - rpos_ > max_len) throw NetError("line exceeds maximum length");
    if (timeout.count() >= 0 && !wait_for(fd_.get(), POLLIN, timeout))
      throw TimeoutError("receive timed out");
    char chunk[4096];
    ssize_t n = ::recv(fd_.get(), chunk, sizeof(chunk), 0);
    if (n == 0) throw PeerClosed("peer closed connection");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) throw PeerClosed("connection reset by peer");
      throw NetError(errno_text("recv"));
    }
    rbuf_.append(chunk, static_cast<std::size_t>(n));
  }
}

void Socket::exchange(Socket& sink, std::span<const std::byte> out, std::span<std::byte> in,
                      Millis timeout) {
  std::size_t sent = 0;
  std::size_t got = take_buffered(in);
  const auto* sp = reinterpret_cast<const char*>(out.data());
  auto* rp = reinterpret_cast<char*>(in.data());
  while (sent < out.size() || got < in.size()) {
    pollfd fds[2];
    nfds_t nfds = 0;
    int send_idx = -1;
    int recv_idx = -1;
    if (sent < out.size()) {
      send_idx = static_cast<int>(nfds);
      fds[nfds++] = pollfd{sink.fd_.get(), POLLOUT, 0};
    }
    if (got < in.size()) {
      recv_idx = static_cast<int>(nfds);
      fds[nfds++] = pollfd{fd_.get(), POLLIN, 0};
    }
    int rc = ::poll(fds, nfds, poll_ms(timeout));
    if (rc == 0) throw TimeoutError("exchange timed out");
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw NetError(errno_text("poll"));
    }
    if (send_idx >= 0 && (fds[send_idx].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t n = ::send(sink.fd_.get(), sp + sent, out.size() - sent, MSG_NOSIGNAL | MSG_DONTWAIT);
      if (n < 0) {
        if (errno == EPIPE || errno == ECONNRESET) throw PeerClosed("peer closed connection");
        if (errno != EAGAIN && errno != EINTR) throw NetError(errno_text("send"));
      } else {
        sent += static_cast<std::size_t>(n);
      }
    }
    if (recv_idx >= 0 && (fds[recv_idx].revents & (POLLIN | POLLERR | POLLHUP))) {
      ssize_t n = ::recv(fd_.get(), rp + got, in.size() - got, MSG_DONTWAIT);
      if (n == 0) throw PeerClosed("peer closed connection");
      if (n < 0) {
        if (errno == ECONNRESET) throw PeerClosed("connection reset by peer");
        if (errno != EAGAIN && errno != EINTR) throw NetError(errno_text("recv"));
      } else {
        got += static_cast<std::size_t>(n);
      }
    }
  }
}

void Socket::shutdown() {
  if (fd_.valid()) ::shutdown(fd_.get(), SHUT_RDWR);
}

Endpoint Socket::local_endpoint() const { return endpoint_of(fd_.get()); }

Listener Listener::bind(const Endpoint& ep, int backlog) {
  Listener l;
  l.fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!l.fd_.valid()) throw NetError(errno_text("socket"));
  int one = 1;
  ::setsockopt(l.fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(ep);
  if (::bind(l.fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw NetError("cannot bind " + ep.str() + ": " + std::strerror(errno));
  if (::listen(l.fd_.get(), backlog) != 0) throw NetError(errno_text("listen"));
  return l;
}

Endpoint Listener::local_endpoint() const { return endpoint_of(fd_.get()); }

std::optional<Socket> Listener::accept(Millis timeout) {
  for (;;) {
    if (timeout.count() >= 0 && !wait_for(fd_.get(), POLLIN, timeout))
      throw TimeoutError("accept timed out");
    int fd = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      set_nodelay(fd);
      return Socket(Fd(fd));
    }
    if (errno == EINTR || errno == ECONNABORTED) continue;
    if (errno == EINVAL || errno == EBADF) return std::nullopt;  // shut down
    throw NetError(errno_text("accept"));
  }
}

void Listener::shutdown() {
  if (fd_.valid()) ::shutdown(fd_.get(), SHUT_RDWR);
}

Socket connect(const Endpoint& ep, Millis timeout) {
  sockaddr_in addr = resolve(ep);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!fd.valid()) throw NetError(errno_text("socket"));
  int rc = ::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc != 0) {
    if (errno != EINPROGRESS) throw NetError("cannot connect to " + ep.str() + ": " + std::strerror(errno));
    if (!wait_for(fd.get(), POLLOUT, timeout)) throw TimeoutError("connect to " + ep.str() + " timed out");
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw NetError("cannot connect to " + ep.str() + ": " + std::strerror(err));
  }
  int flags = ::fcntl(fd.get(), F_GETFL);
  ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
  set_nodelay(fd.get());
  return Socket(std::move(fd));
}

}  // namespace hflow::net
