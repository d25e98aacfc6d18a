#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <iostream>

#include "hflow/collectives/communicator.hpp"
#include "hflow/engine/context.hpp"
#include "hflow/engine/wire.hpp"
#include "hflow/rendezvous/client.hpp"

namespace hflow::engine {
namespace {

// Sets the rendezvous variables for the duration of one collective stage.
class ScopedRendezvousEnv {
 public:
  explicit ScopedRendezvousEnv(const wire::CollectiveEnv& env) {
    ::setenv(rendezvous::kEnvPort, env.rendezvous.c_str(), 1);
    ::setenv(rendezvous::kEnvRank, std::to_string(env.rank).c_str(), 1);
  }
  ~ScopedRendezvousEnv() {
    ::unsetenv(rendezvous::kEnvPort);
    ::unsetenv(rendezvous::kEnvRank);
  }
};

std::vector<Bytes> run_stage(const Stage& stage, std::vector<Bytes> elems, const wire::CollectiveEnv& env) {
  auto& reg = TaskRegistry::global();
  if (stage.kind == StageKind::map) {
    const MapFn* fn = reg.find_map(stage.task.function);
    if (fn == nullptr) throw TaskError("unknown map function '" + stage.task.function + "'");
    for (auto& e : elems) e = (*fn)(e, stage.task.config);
    return elems;
  }
  const PartitionFn* fn = reg.find_partition(stage.task.function);
  if (fn == nullptr) throw TaskError("unknown partition function '" + stage.task.function + "'");
  if (stage.task.kind == TaskKind::plain) {
    TaskContext ctx(stage.index, stage.task.config, nullptr);
    return (*fn)(ctx, std::move(elems));
  }

  ScopedRendezvousEnv scoped(env);
  auto session = rendezvous::ClientSession::from_environment(env.group);
  auto comm = collectives::Communicator::connect(session);
  TaskContext ctx(stage.index, stage.task.config, &comm);
  auto out = (*fn)(ctx, std::move(elems));
  // On failure the session is dropped unfinalized, which fails the group and
  // releases any peer still waiting on this rank.
  session.finalize();
  return out;
}

wire::Result execute(wire::Task task) {
  wire::Result res;
  res.job = task.job;
  res.partition = task.partition;
  try {
    std::vector<Bytes> elems = std::move(task.elements);
    for (const auto& stage : task.stages) elems = run_stage(stage, std::move(elems), task.env);
    res.count = elems.size();
    if (!task.count_only) res.elements = std::move(elems);
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = "partition " + std::to_string(task.partition) + ": " + e.what();
  }
  return res;
}

}  // namespace

int worker_main(const net::Endpoint& driver) {
  try {
    auto sock = net::connect(driver);
    wire::send(sock, wire::Hello{static_cast<std::uint32_t>(::getpid())});
    for (;;) {
      auto msg = wire::receive(sock);
      if (std::holds_alternative<wire::Shutdown>(msg)) return 0;
      auto* task = std::get_if<wire::Task>(&msg);
      if (task == nullptr) {
        std::cerr << "worker: unexpected message from driver\n";
        return 3;
      }
      wire::send(sock, execute(std::move(*task)));
    }
  } catch (const net::PeerClosed&) {
    return 0;  // driver went away
  } catch (const std::exception& e) {
    std::cerr << "worker: " << e.what() << "\n";
    return 3;
  }
}

std::optional<int> run_worker_if_requested(int argc, char** argv) {
  bool worker = false;
  std::string driver;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--worker") == 0) worker = true;
    if (std::strcmp(argv[i], "--driver") == 0 && i + 1 < argc) driver = argv[i + 1];
  }
  if (!worker) return std::nullopt;
  if (driver.empty()) {
    std::cerr << "--worker requires --driver host:port\n";
    return 1;
  }
  return worker_main(net::Endpoint::parse(driver));
}

}  // namespace hflow::engine
