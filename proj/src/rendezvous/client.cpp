#include "hflow/rendezvous/client.hpp"

#include <charconv>
#include <cstdlib>

namespace hflow::rendezvous {

using Kind = RendezvousError::Kind;

ClientSession ClientSession::init(const net::Endpoint& server, std::string group, int rank,
                                  net::Millis timeout) {
  ClientSession s;
  s.server_ = server;
  s.group_ = std::move(group);
  s.rank_ = rank;
  s.timeout_ = timeout;
  try {
    s.sock_ = net::connect(server, timeout);
  } catch (const net::NetError& e) {
    throw RendezvousError(Kind::io, "unreachable", e.what());
  }
  Record reply = s.roundtrip(Record("init").add("group", s.group_).add("rank", std::to_string(rank)), timeout);
  if (reply.cmd() != "init_ack") {
    auto why = reply.find("reason").value_or("unknown");
    throw RendezvousError(Kind::init, why, "init of rank " + std::to_string(rank) + " in group '" + s.group_ +
                                               "' refused: " + why);
  }
  const std::string& size_text = reply.at("size");
  std::from_chars(size_text.data(), size_text.data() + size_text.size(), s.size_);
  s.state_ = State::initialized;
  return s;
}

ClientSession ClientSession::from_environment(std::string group) {
  const char* port = std::getenv(kEnvPort);
  const char* rank = std::getenv(kEnvRank);
  if (port == nullptr || rank == nullptr)
    throw RendezvousError(Kind::init, "missing_env",
                          std::string(kEnvPort) + " and " + kEnvRank + " must be set");
  int r = -1;
  std::string_view rank_text(rank);
  auto [ptr, ec] = std::from_chars(rank_text.data(), rank_text.data() + rank_text.size(), r);
  if (ec != std::errc{} || ptr != rank_text.data() + rank_text.size())
    throw RendezvousError(Kind::init, "bad_env", std::string(kEnvRank) + " is not an integer");
  return init(net::Endpoint::parse(port), std::move(group), r);
}

ClientSession::~ClientSession() = default;

Record ClientSession::roundtrip(const Record& req, net::Millis timeout) {
  try {
    sock_.send_all(req.encode(), timeout);
    return Record::parse(sock_.read_line(kMaxLineBytes, timeout));
  } catch (const ProtocolError& e) {
    throw RendezvousError(Kind::protocol, "malformed", e.what());
  } catch (const net::NetError& e) {
    throw RendezvousError(Kind::io, "io", std::string("rendezvous connection: ") + e.what());
  }
}

void ClientSession::require_initialized(const char* op) const {
  if (state_ != State::initialized)
    throw RendezvousError(Kind::session_state, std::string(reason::kNotInitialized),
                          std::string(op) + " on a session that is not initialized");
}

void ClientSession::put(std::string_view key, std::string_view value) {
  require_initialized("put");
  Record reply = roundtrip(Record("put").add("key", std::string(key)).add("value", std::string(value)), timeout_);
  if (reply.cmd() == "put_ack") return;
  auto why = reply.find("reason").value_or("unknown");
  Kind kind = (why == reason::kKeyTooLong || why == reason::kValueTooLong || reply.cmd() == "error")
                  ? Kind::protocol
                  : Kind::put;
  throw RendezvousError(kind, why, "put '" + std::string(key) + "' failed: " + why);
}

std::optional<std::string> ClientSession::get(std::string_view key) {
  require_initialized("get");
  Record reply = roundtrip(Record("get").add("key", std::string(key)), timeout_);
  if (reply.cmd() == "get_ack") return reply.at("value");
  if (reply.cmd() == "get_neg") return std::nullopt;
  auto why = reply.find("reason").value_or("unknown");
  throw RendezvousError(Kind::protocol, why, "get failed: " + why);
}

std::uint64_t ClientSession::barrier() {
  require_initialized("barrier");
  // Barriers wait for peers, so they are not bounded by the per-request timeout.
  Record reply = roundtrip(Record("barrier"), net::kNoTimeout);
  if (reply.cmd() == "barrier_ack") {
    const std::string& e = reply.at("epoch");
    std::uint64_t epoch = 0;
    std::from_chars(e.data(), e.data() + e.size(), epoch);
    return epoch;
  }
  auto why = reply.find("reason").value_or("unknown");
  throw RendezvousError(reply.cmd() == "group_err" ? Kind::group_failure : Kind::protocol, why,
                        "barrier in group '" + group_ + "' failed: " + why);
}

void ClientSession::finalize() {
  require_initialized("finalize");
  Record reply = roundtrip(Record("finalize"), timeout_);
  state_ = State::finalized;
  if (reply.cmd() != "finalize_ack") {
    auto why = reply.find("reason").value_or("unknown");
    throw RendezvousError(Kind::protocol, why, "finalize failed: " + why);
  }
  sock_.close();
}

}  // namespace hflow::rendezvous
