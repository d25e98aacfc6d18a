#include "hflow/engine/task.hpp"

namespace hflow::engine {

TaskRegistry& TaskRegistry::global() {
  static TaskRegistry registry;
  return registry;
}

void TaskRegistry::add_map(const std::string& id, MapFn fn) { maps_[id] = std::move(fn); }

void TaskRegistry::add_partition(const std::string& id, PartitionFn fn) { partitions_[id] = std::move(fn); }

const MapFn* TaskRegistry::find_map(const std::string& id) const {
  auto it = maps_.find(id);
  return it == maps_.end() ? nullptr : &it->second;
}

const PartitionFn* TaskRegistry::find_partition(const std::string& id) const {
  auto it = partitions_.find(id);
  return it == partitions_.end() ? nullptr : &it->second;
}

}  // namespace hflow::engine
