#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hflow/engine/codec.hpp"
#include "hflow/engine/task.hpp"

namespace hflow::engine {

enum class StageKind : std::uint8_t { map = 0, map_partitions = 1 };

/// One recorded transformation, pinned to the partition it applies to.
struct Stage {
  StageKind kind = StageKind::map;
  TaskSpec task;
  std::uint32_t index = 0;       // partition index when the stage was recorded
  std::uint32_t group_size = 0;  // partition count when recorded (gang size)
  std::uint64_t uid = 0;         // shared by every partition of one transformation
};

/// Lazy partition: its source elements plus the stages still to apply.
struct PartitionPlan {
  std::shared_ptr<const std::vector<Bytes>> source;
  std::vector<Stage> stages;
};

/// Immutable partitioned collection (RDD analog). Transformations only
/// record stages; Context::collect / Context::count execute them.
class Dataset {
 public:
  /// Contiguous block split: the first partitions take ceil(N/p) items each,
  /// the rest whatever remains (possibly nothing).
  static Dataset parallelize(std::vector<Bytes> items, int num_partitions,
                             std::string kind = std::string(kind::kBytes));
  static Dataset from_partitions(std::vector<std::vector<Bytes>> partitions,
                                 std::string kind = std::string(kind::kBytes));

  Dataset map(TaskSpec task, std::string result_kind = {}) const;
  Dataset map_partitions_with_index(TaskSpec task, std::string result_kind = {}) const;
  /// Partitions of each operand in operand order. Kinds must agree.
  static Dataset union_of(std::span<const Dataset> operands);

  std::size_t num_partitions() const { return parts_.size(); }
  const std::string& kind() const { return kind_; }
  const std::vector<PartitionPlan>& partitions() const { return parts_; }

 private:
  Dataset with_stage(StageKind k, TaskSpec task, std::string result_kind) const;

  std::string kind_;
  std::vector<PartitionPlan> parts_;
};

}  // namespace hflow::engine
