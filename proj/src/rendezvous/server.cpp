#include "hflow/rendezvous/server.hpp"

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "hflow/rendezvous/protocol.hpp"

namespace hflow::rendezvous {
namespace {

struct Group {
  explicit Group(GroupSpec s) : spec(std::move(s)) {}

  GroupSpec spec;
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::string, std::string> kvs;
  std::set<int> joined;
  std::set<int> waiters;
  std::uint64_t epoch = 0;
  bool failed = false;
  bool closing = false;
  std::string fail_reason;

  // Caller holds mu.
  void fail(std::string_view why) {
    if (!failed) {
      failed = true;
      fail_reason = std::string(why);
    }
    cv.notify_all();
  }

  // Caller holds mu.
  void leave(int rank) {
    joined.erase(rank);
    waiters.erase(rank);
    if (joined.empty()) {
      kvs.clear();
      waiters.clear();
      epoch = 0;
      failed = false;
      closing = false;
      fail_reason.clear();
    }
  }
};

Record error_record(std::string cmd, std::string_view why) {
  return Record(std::move(cmd)).add("reason", std::string(why));
}

}  // namespace

struct Server::Impl {
  net::Listener listener;
  net::Endpoint bound;
  std::map<std::string, std::unique_ptr<Group>, std::less<>> groups;

  std::atomic<bool> stopping{false};
  std::mutex conn_mu;
  std::vector<std::shared_ptr<net::Socket>> conns;
  std::vector<std::thread> threads;
  std::thread acceptor;

  void accept_loop() {
    while (!stopping.load()) {
      std::optional<net::Socket> sock;
      try {
        sock = listener.accept();
      } catch (const net::NetError&) {
        break;
      }
      if (!sock) break;
      auto shared = std::make_shared<net::Socket>(std::move(*sock));
      std::lock_guard lock(conn_mu);
      if (stopping.load()) {
        shared->shutdown();
        break;
      }
      conns.push_back(shared);
      threads.emplace_back([this, shared] { serve(*shared); });
    }
  }

  struct ConnState {
    Group* group = nullptr;
    int rank = -1;
  };

  void serve(net::Socket& sock) {
    ConnState st;
    try {
      for (;;) {
        std::string line = sock.read_line(kMaxLineBytes);
        Record reply = handle(line, st);
        sock.send_all(reply.encode());
      }
    } catch (const std::exception&) {
      // Connection gone (or server stopping).
    }
    if (st.group != nullptr) {
      std::lock_guard lock(st.group->mu);
      st.group->fail(reason::kPeerDisconnected);
      st.group->leave(st.rank);
    }
  }

  Record handle(std::string_view line, ConnState& st) {
    Record req;
    try {
      req = Record::parse(line);
    } catch (const ProtocolError&) {
      return error_record("error", reason::kMalformed);
    }
    const std::string& cmd = req.cmd();
    try {
      if (cmd == "init") return handle_init(req, st);
      if (cmd != "put" && cmd != "get" && cmd != "barrier" && cmd != "finalize")
        return error_record("error", reason::kUnknownCommand);
      if (st.group == nullptr) return error_record("error", reason::kNotInitialized);
      if (cmd == "put") return handle_put(req, st);
      if (cmd == "get") return handle_get(req, st);
      if (cmd == "barrier") return handle_barrier(st);
      return handle_finalize(st);
    } catch (const ProtocolError&) {
      return error_record("error", reason::kMalformed);
    }
  }

  Record handle_init(const Record& req, ConnState& st) {
    if (st.group != nullptr) return error_record("init_err", reason::kAlreadyInitialized);
    const std::string& gid = req.at("group");
    const std::string& rank_text = req.at("rank");
    int rank = -1;
    auto [ptr, ec] = std::from_chars(rank_text.data(), rank_text.data() + rank_text.size(), rank);
    if (ec != std::errc{} || ptr != rank_text.data() + rank_text.size()) throw ProtocolError("bad rank");

    auto it = groups.find(gid);
    if (it == groups.end()) return error_record("init_err", reason::kUnknownGroup);
    Group& g = *it->second;
    std::lock_guard lock(g.mu);
    if (rank < 0 || rank >= g.spec.size) return error_record("init_err", reason::kRankOutOfRange);
    if (g.joined.contains(rank)) return error_record("init_err", reason::kDuplicateRank);
    if (g.failed || g.closing) return error_record("init_err", reason::kGroupFailed);
    g.joined.insert(rank);
    st.group = &g;
    st.rank = rank;
    return Record("init_ack").add("size", std::to_string(g.spec.size));
  }

  Record handle_put(const Record& req, ConnState& st) {
    const std::string& key = req.at("key");
    const std::string& value = req.at("value");
    if (percent_encode(key).size() > kMaxKeyBytes) return error_record("put_err", reason::kKeyTooLong);
    if (percent_encode(value).size() > kMaxValueBytes)
      return error_record("put_err", reason::kValueTooLong);
    Group& g = *st.group;
    std::lock_guard lock(g.mu);
    if (g.failed) return error_record("put_err", reason::kGroupFailed);
    if (!g.kvs.emplace(key, value).second) return error_record("put_err", reason::kDuplicateKey);
    return Record("put_ack");
  }

  Record handle_get(const Record& req, ConnState& st) {
    const std::string& key = req.at("key");
    Group& g = *st.group;
    std::lock_guard lock(g.mu);
    auto it = g.kvs.find(key);
    if (it == g.kvs.end()) return Record("get_neg");
    return Record("get_ack").add("value", it->second);
  }

  Record handle_barrier(ConnState& st) {
    Group& g = *st.group;
    std::unique_lock lock(g.mu);
    if (g.failed) return error_record("group_err", g.fail_reason);
    if (g.closing) return error_record("group_err", reason::kPeerFinalized);
    const std::uint64_t entered = g.epoch;
    g.waiters.insert(st.rank);
    if (static_cast<int>(g.waiters.size()) == g.spec.size) {
      g.waiters.clear();
      ++g.epoch;
      g.cv.notify_all();
      return Record("barrier_ack").add("epoch", std::to_string(entered));
    }
    g.cv.wait(lock, [&] { return g.epoch != entered || g.failed || stopping.load(); });
    if (g.epoch != entered) return Record("barrier_ack").add("epoch", std::to_string(entered));
    g.waiters.erase(st.rank);
    if (stopping.load() && !g.failed) return error_record("group_err", reason::kServerShutdown);
    return error_record("group_err", g.fail_reason);
  }

  Record handle_finalize(ConnState& st) {
    Group& g = *st.group;
    std::lock_guard lock(g.mu);
    if (!g.waiters.empty()) g.fail(reason::kPeerFinalized);
    g.closing = true;
    g.leave(st.rank);
    st.group = nullptr;
    st.rank = -1;
    return Record("finalize_ack");
  }
};

Server::Server(const net::Endpoint& bind, std::vector<GroupSpec> groups) : impl_(std::make_unique<Impl>()) {
  for (auto& spec : groups) {
    if (spec.size < 1) throw ConfigError("group '" + spec.id + "' must have size >= 1");
    if (spec.id.empty()) throw ConfigError("group id must not be empty");
    std::string id = spec.id;
    if (!impl_->groups.emplace(id, std::make_unique<Group>(std::move(spec))).second)
      throw ConfigError("duplicate group id '" + id + "'");
  }
  impl_->listener = net::Listener::bind(bind);
  impl_->bound = impl_->listener.local_endpoint();
  if (bind.host != "0.0.0.0" && !bind.host.empty() && bind.host != "*") impl_->bound.host = bind.host;
  impl_->acceptor = std::thread([impl = impl_.get()] { impl->accept_loop(); });
}

Server::~Server() { shutdown(); }

net::Endpoint Server::endpoint() const { return impl_->bound; }

void Server::shutdown() {
  if (!impl_ || impl_->stopping.exchange(true)) return;
  impl_->listener.shutdown();
  if (impl_->acceptor.joinable()) impl_->acceptor.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(impl_->conn_mu);
    for (auto& c : impl_->conns) c->shutdown();
    threads.swap(impl_->threads);
  }
  for (auto& [_, g] : impl_->groups) {
    std::lock_guard lock(g->mu);
    g->cv.notify_all();
  }
  for (auto& t : threads) t.join();
}

std::vector<GroupSpec> parse_group_list(const std::string& text) {
  std::vector<GroupSpec> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(pos, end - pos);
    auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size())
      throw ConfigError("group must be id:size, got '" + item + "'");
    int size = 0;
    const char* first = item.data() + colon + 1;
    const char* last = item.data() + item.size();
    auto [ptr, ec] = std::from_chars(first, last, size);
    if (ec != std::errc{} || ptr != last) throw ConfigError("bad group size in '" + item + "'");
    out.push_back(GroupSpec{item.substr(0, colon), size});
    pos = end + 1;
  }
  if (out.empty()) throw ConfigError("no groups given");
  return out;
}

}  // namespace hflow::rendezvous
