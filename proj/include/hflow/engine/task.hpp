#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hflow/collectives/communicator.hpp"
#include "hflow/engine/codec.hpp"
#include "hflow/net/socket.hpp"

namespace hflow::engine {

class TaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind : std::uint8_t { plain = 0, collective = 1 };

struct TaskSpec {
  TaskKind kind = TaskKind::plain;
  std::string function;
  Bytes config;
  // Collective tasks only. Empty group / no endpoint: the driver hosts a
  // private rendezvous server for the job.
  std::string group_id;
  std::optional<net::Endpoint> rendezvous;

  static TaskSpec plain(std::string fn, Bytes config = {}) {
    return TaskSpec{TaskKind::plain, std::move(fn), std::move(config), {}, std::nullopt};
  }
  static TaskSpec collective(std::string fn, Bytes config = {}, std::string group = {}) {
    return TaskSpec{TaskKind::collective, std::move(fn), std::move(config), std::move(group), std::nullopt};
  }
};

/// What a partition task sees while it runs on a worker.
class TaskContext {
 public:
  TaskContext(std::size_t partition, const Bytes& config, collectives::Communicator* comm)
      : partition_(partition), config_(config), comm_(comm) {}

  std::size_t partition() const { return partition_; }
  const Bytes& config() const { return config_; }
  bool collective() const { return comm_ != nullptr; }
  /// Throws TaskError for plain tasks. Rank equals the partition index.
  collectives::Communicator& communicator() const {
    if (comm_ == nullptr) throw TaskError("task is not collective; no communicator");
    return *comm_;
  }

 private:
  std::size_t partition_;
  const Bytes& config_;
  collectives::Communicator* comm_;
};

using MapFn = std::function<Bytes(const Bytes& element, const Bytes& config)>;
using PartitionFn = std::function<std::vector<Bytes>(TaskContext& ctx, std::vector<Bytes> elements)>;

/// Static table of named task functions. Driver and workers run the same
/// binary, so both sides resolve the same names.
class TaskRegistry {
 public:
  static TaskRegistry& global();

  void add_map(const std::string& id, MapFn fn);
  void add_partition(const std::string& id, PartitionFn fn);

  const MapFn* find_map(const std::string& id) const;
  const PartitionFn* find_partition(const std::string& id) const;

 private:
  std::map<std::string, MapFn> maps_;
  std::map<std::string, PartitionFn> partitions_;
};

}  // namespace hflow::engine
