#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <sys/types.h>
#include <vector>

#include "hflow/engine/dataset.hpp"
#include "hflow/net/socket.hpp"

namespace hflow::engine {

/// A collective job could not get enough simultaneous workers. Raised before
/// any of its tasks is dispatched.
class SchedulingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A job failed. Results of partitions that did complete are discarded.
class JobError : public std::runtime_error {
 public:
  JobError(std::size_t partition, const std::string& what) : std::runtime_error(what), partition_(partition) {}
  std::size_t partition() const { return partition_; }

 private:
  std::size_t partition_;
};

struct WorkerProcess {
  pid_t pid = -1;
  net::Socket sock;
  bool alive = false;
};

/// Worker processes launched as `<launch...> --worker --driver host:port`.
/// Each runs at most one task at a time.
class WorkerPool {
 public:
  WorkerPool(int count, std::vector<std::string> launch, net::Millis startup_timeout = net::Millis{20'000});
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()); }
  int live() const;
  /// Replaces workers that have died since the last job.
  void respawn_dead();
  WorkerProcess& worker(int i) { return workers_[static_cast<std::size_t>(i)]; }
  void mark_dead(int i);
  /// Test hook: SIGKILL one worker.
  void kill(int i);

 private:
  void spawn(std::size_t slot);

  std::vector<std::string> launch_;
  net::Millis startup_timeout_;
  net::Listener listener_;
  net::Endpoint endpoint_;
  std::vector<WorkerProcess> workers_;
};

/// Driver: owns the worker pool and executes dataset plans. One job at a time.
class Context {
 public:
  struct Options {
    int workers = 1;
    /// argv prefix used to start a worker; defaults to this executable.
    std::vector<std::string> launch;
  };

  explicit Context(Options options);

  std::vector<std::vector<Bytes>> collect_partitions(const Dataset& ds);
  std::vector<Bytes> collect(const Dataset& ds);
  /// Total element count; workers send counts, not payloads.
  std::uint64_t count(const Dataset& ds);

  WorkerPool& pool() { return pool_; }

 private:
  struct Outcome {
    std::vector<std::vector<Bytes>> parts;
    std::vector<std::uint64_t> counts;
  };
  Outcome run(const Dataset& ds, bool count_only);

  std::mutex job_mu_;
  std::uint64_t next_job_ = 1;
  WorkerPool pool_;
};

/// Path of the running executable.
std::string self_executable();

/// If argv contains `--worker`, runs the worker loop against `--driver` and
/// returns its exit code.
std::optional<int> run_worker_if_requested(int argc, char** argv);

/// Worker loop: connect, announce, execute tasks until shutdown.
int worker_main(const net::Endpoint& driver);

}  // namespace hflow::engine
