#include "hflow/engine/context.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <thread>

#include "hflow/engine/wire.hpp"
#include "hflow/rendezvous/server.hpp"

extern char** environ;

namespace hflow::engine {
namespace {

void reap(pid_t pid, std::chrono::milliseconds grace) {
  if (pid <= 0) return;
  auto deadline = std::chrono::steady_clock::now() + grace;
  for (;;) {
    int status = 0;
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid || r < 0) return;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

// Which collective transformation (if any) a plan contains. A job may hold at
// most one, applied to every partition at its recorded index.
const Stage* collective_stage(const Dataset& ds) {
  const Stage* found = nullptr;
  std::set<std::uint64_t> uids;
  for (const auto& part : ds.partitions())
    for (const auto& s : part.stages)
      if (s.task.kind == TaskKind::collective) {
        uids.insert(s.uid);
        found = &s;
      }
  if (uids.empty()) return nullptr;
  if (uids.size() > 1) throw TaskError("a job may contain at most one collective transformation");
  const auto p = ds.num_partitions();
  for (std::size_t i = 0; i < p; ++i) {
    const auto& stages = ds.partitions()[i].stages;
    auto it = std::find_if(stages.begin(), stages.end(), [&](const Stage& s) { return s.uid == found->uid; });
    if (it == stages.end() || it->index != i || it->group_size != p)
      throw TaskError("collective transformation must cover every partition of the job, rank = partition index");
  }
  return found;
}

}  // namespace

std::string self_executable() { return std::filesystem::read_symlink("/proc/self/exe").string(); }

WorkerPool::WorkerPool(int count, std::vector<std::string> launch, net::Millis startup_timeout)
    : launch_(std::move(launch)), startup_timeout_(startup_timeout) {
  if (count < 1) throw std::invalid_argument("worker pool needs at least one worker");
  if (launch_.empty()) launch_.push_back(self_executable());
  listener_ = net::Listener::bind(net::Endpoint{"127.0.0.1", 0});
  endpoint_ = listener_.local_endpoint();
  workers_.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < workers_.size(); ++i) spawn(i);
}

WorkerPool::~WorkerPool() {
  for (auto& w : workers_) {
    if (!w.alive) continue;
    try {
      wire::send(w.sock, wire::Shutdown{});
    } catch (const std::exception&) {
    }
    w.sock.close();
  }
  for (auto& w : workers_) reap(w.pid, std::chrono::milliseconds(5000));
}

void WorkerPool::spawn(std::size_t slot) {
  std::vector<std::string> args = launch_;
  args.insert(args.end(), {"--worker", "--driver", endpoint_.str()});
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = -1;
  if (::posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0)
    throw std::runtime_error("cannot launch worker '" + args[0] + "'");

  // Workers may connect in any order; match by announced pid.
  for (;;) {
    std::optional<net::Socket> sock;
    try {
      sock = listener_.accept(startup_timeout_);
    } catch (const net::TimeoutError&) {
      ::kill(pid, SIGKILL);
      reap(pid, std::chrono::milliseconds(0));
      throw std::runtime_error("worker did not connect within the startup timeout");
    }
    if (!sock) throw std::runtime_error("driver listener closed");
    auto msg = wire::receive(*sock, startup_timeout_);
    auto* hello = std::get_if<wire::Hello>(&msg);
    if (hello == nullptr || static_cast<pid_t>(hello->pid) != pid) continue;
    workers_[slot] = WorkerProcess{pid, std::move(*sock), true};
    return;
  }
}

int WorkerPool::live() const {
  return static_cast<int>(std::count_if(workers_.begin(), workers_.end(), [](const auto& w) { return w.alive; }));
}

void WorkerPool::mark_dead(int i) {
  auto& w = workers_[static_cast<std::size_t>(i)];
  if (!w.alive) return;
  w.alive = false;
  w.sock.close();
  reap(w.pid, std::chrono::milliseconds(1000));
  w.pid = -1;
}

void WorkerPool::kill(int i) {
  auto& w = workers_[static_cast<std::size_t>(i)];
  if (w.alive && w.pid > 0) ::kill(w.pid, SIGKILL);
}

void WorkerPool::respawn_dead() {
  for (std::size_t i = 0; i < workers_.size(); ++i)
    if (!workers_[i].alive) spawn(i);
}

Context::Context(Options options) : pool_(options.workers, std::move(options.launch)) {}

Context::Outcome Context::run(const Dataset& ds, bool count_only) {
  std::lock_guard job_lock(job_mu_);
  const std::uint64_t job = next_job_++;
  const std::size_t nparts = ds.num_partitions();
  Outcome out;
  out.parts.resize(nparts);
  out.counts.resize(nparts);
  if (nparts == 0) return out;

  const Stage* gang = collective_stage(ds);
  pool_.respawn_dead();

  std::unique_ptr<rendezvous::Server> server;
  wire::CollectiveEnv env;
  std::vector<int> workers;
  for (int i = 0; i < pool_.size(); ++i)
    if (pool_.worker(i).alive) workers.push_back(i);

  if (gang != nullptr) {
    if (workers.size() < nparts)
      throw SchedulingError("collective task over " + std::to_string(nparts) + " partitions needs " +
                            std::to_string(nparts) + " simultaneous workers; pool has " +
                            std::to_string(workers.size()));
    workers.resize(nparts);
    env.group = gang->task.group_id.empty() ? "job-" + std::to_string(job) : gang->task.group_id;
    if (gang->task.rendezvous) {
      env.rendezvous = gang->task.rendezvous->str();
    } else {
      server = std::make_unique<rendezvous::Server>(
          net::Endpoint{"127.0.0.1", 0},
          std::vector<rendezvous::GroupSpec>{{env.group, static_cast<int>(nparts)}});
      env.rendezvous = server->endpoint().str();
    }
  }

  std::mutex mu;
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < nparts; ++i) queue.push_back(i);
  std::map<std::size_t, std::string> errors;
  std::atomic<bool> abort{false};

  auto drive = [&](int slot, std::optional<std::size_t> fixed) {
    auto& w = pool_.worker(slot);
    for (;;) {
      std::size_t part;
      if (fixed) {
        part = *fixed;
      } else {
        std::lock_guard lock(mu);
        if (abort || queue.empty()) return;
        part = queue.front();
        queue.pop_front();
      }
      wire::Task task;
      task.job = job;
      task.partition = static_cast<std::uint32_t>(part);
      task.count_only = count_only;
      task.stages = ds.partitions()[part].stages;
      task.elements = *ds.partitions()[part].source;
      if (gang != nullptr) {
        task.env = env;
        task.env.rank = static_cast<std::uint32_t>(part);
      }
      try {
        wire::send(w.sock, task);
        auto msg = wire::receive(w.sock);
        auto* res = std::get_if<wire::Result>(&msg);
        if (res == nullptr || res->job != job || res->partition != part)
          throw DecodeError("unexpected reply from worker");
        if (!res->ok) {
          std::lock_guard lock(mu);
          errors.emplace(part, res->error);
          abort = true;
          return;
        }
        std::lock_guard lock(mu);
        out.counts[part] = res->count;
        out.parts[part] = std::move(res->elements);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        errors.emplace(part, "worker " + std::to_string(w.pid) + " lost while running partition " +
                                 std::to_string(part) + ": " + e.what());
        abort = true;
        pool_.mark_dead(slot);
        return;
      }
      if (fixed) return;
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < workers.size(); ++k) {
    std::optional<std::size_t> fixed;
    if (gang != nullptr) fixed = k;
    threads.emplace_back(drive, workers[k], fixed);
  }
  for (auto& t : threads) t.join();

  if (!errors.empty()) {
    auto& [part, msg] = *errors.begin();
    throw JobError(part, "job " + std::to_string(job) + " failed in partition " + std::to_string(part) + ": " + msg);
  }
  return out;
}

std::vector<std::vector<Bytes>> Context::collect_partitions(const Dataset& ds) { return run(ds, false).parts; }

std::vector<Bytes> Context::collect(const Dataset& ds) {
  std::vector<Bytes> flat;
  for (auto& p : run(ds, false).parts) std::move(p.begin(), p.end(), std::back_inserter(flat));
  return flat;
}

std::uint64_t Context::count(const Dataset& ds) {
  std::uint64_t total = 0;
  for (auto c : run(ds, true).counts) total += c;
  return total;
}

}  // namespace hflow::engine
