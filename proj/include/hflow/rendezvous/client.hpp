#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "hflow/net/socket.hpp"
#include "hflow/rendezvous/protocol.hpp"

namespace hflow::rendezvous {

// Environment variables through which a launcher hands a worker its
// rendezvous server and rank.
inline constexpr const char* kEnvPort = "RDV_PORT";
inline constexpr const char* kEnvRank = "RDV_RANK";

class RendezvousError : public std::runtime_error {
 public:
  enum class Kind { init, put, protocol, group_failure, session_state, io };

  RendezvousError(Kind kind, std::string reason, const std::string& what)
      : std::runtime_error(what), kind_(kind), reason_(std::move(reason)) {}

  Kind kind() const { return kind_; }
  /// Reason token from the server, or a short local description.
  const std::string& reason() const { return reason_; }

 private:
  Kind kind_;
  std::string reason_;
};

/// One rank's connection to a rendezvous group. Single owner; may be moved
/// between threads but not used from two at once.
class ClientSession {
 public:
  enum class State { connected, initialized, finalized };

  /// Connects and joins `group` as `rank`. Throws RendezvousError(init) when
  /// the server refuses, RendezvousError(io) when it cannot be reached.
  static ClientSession init(const net::Endpoint& server, std::string group, int rank,
                            net::Millis timeout = net::Millis{30'000});

  /// Reads RDV_PORT and RDV_RANK and joins `group`.
  static ClientSession from_environment(std::string group);

  ClientSession(ClientSession&&) noexcept = default;
  ClientSession& operator=(ClientSession&&) noexcept = default;
  ~ClientSession();

  const std::string& group() const { return group_; }
  int rank() const { return rank_; }
  int size() const { return size_; }
  State state() const { return state_; }
  const net::Endpoint& server() const { return server_; }
  /// Address of this side of the server connection; peers can reach us there.
  net::Endpoint local_endpoint() const { return sock_.local_endpoint(); }

  void put(std::string_view key, std::string_view value);
  /// std::nullopt when the key is absent; the session stays usable.
  std::optional<std::string> get(std::string_view key);
  /// Blocks until all ranks of the group arrive; returns the completed epoch.
  std::uint64_t barrier();
  void finalize();

 private:
  ClientSession() = default;
  Record roundtrip(const Record& req, net::Millis timeout);
  void require_initialized(const char* op) const;

  net::Socket sock_;
  net::Endpoint server_;
  std::string group_;
  int rank_ = -1;
  int size_ = 0;
  State state_ = State::connected;
  net::Millis timeout_{30'000};
};

}  // namespace hflow::rendezvous
