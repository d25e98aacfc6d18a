#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hflow/net/socket.hpp"

namespace hflow::rendezvous {

struct GroupSpec {
  std::string id;
  int size = 1;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Process-management style rendezvous server: key-value exchange and
/// barriers for named process groups. Processes are never launched here.
///
/// Every group owns one key-value space. Entries are immutable once put.
/// Mutations to a group are serialized under that group's lock; separate
/// groups share nothing.
///
/// A group fails as a whole when a joined rank disconnects without
/// finalizing, or finalizes while others are inside a barrier. Once every
/// joined rank has left, the group resets to its empty initial state and may
/// be reused.
class Server {
 public:
  /// Binds and starts accepting. Throws net::NetError if the endpoint cannot
  /// be bound and ConfigError on a bad group list.
  Server(const net::Endpoint& bind, std::vector<GroupSpec> groups);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  net::Endpoint endpoint() const;
  /// Stops accepting, aborts blocked barriers and joins all threads. Idempotent.
  void shutdown();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Parses "g0:4,g1:2" into group specs.
std::vector<GroupSpec> parse_group_list(const std::string& text);

}  // namespace hflow::rendezvous
