#include "hflow/engine/dataset.hpp"

#include <atomic>
#include <stdexcept>

namespace hflow::engine {
namespace {

std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace

Dataset Dataset::parallelize(std::vector<Bytes> items, int num_partitions, std::string kind) {
  if (num_partitions < 1) throw std::invalid_argument("num_partitions must be >= 1");
  const std::size_t n = items.size();
  const auto p = static_cast<std::size_t>(num_partitions);
  const std::size_t block = (n + p - 1) / p;
  std::vector<std::vector<Bytes>> parts(p);
  std::size_t next = 0;
  for (std::size_t i = 0; i < p; ++i) {
    std::size_t take = std::min(block, n - next);
    parts[i].assign(std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(next)),
                    std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(next + take)));
    next += take;
  }
  return from_partitions(std::move(parts), std::move(kind));
}

Dataset Dataset::from_partitions(std::vector<std::vector<Bytes>> partitions, std::string kind) {
  Dataset ds;
  ds.kind_ = std::move(kind);
  ds.parts_.reserve(partitions.size());
  for (auto& p : partitions)
    ds.parts_.push_back(PartitionPlan{std::make_shared<const std::vector<Bytes>>(std::move(p)), {}});
  return ds;
}

Dataset Dataset::with_stage(StageKind k, TaskSpec task, std::string result_kind) const {
  Dataset out = *this;
  if (!result_kind.empty()) out.kind_ = std::move(result_kind);
  const std::uint64_t uid = next_uid();
  const auto count = static_cast<std::uint32_t>(parts_.size());
  for (std::uint32_t i = 0; i < count; ++i) out.parts_[i].stages.push_back(Stage{k, task, i, count, uid});
  return out;
}

Dataset Dataset::map(TaskSpec task, std::string result_kind) const {
  if (task.kind == TaskKind::collective)
    throw std::invalid_argument("collective tasks run through map_partitions_with_index");
  return with_stage(StageKind::map, std::move(task), std::move(result_kind));
}

Dataset Dataset::map_partitions_with_index(TaskSpec task, std::string result_kind) const {
  return with_stage(StageKind::map_partitions, std::move(task), std::move(result_kind));
}

Dataset Dataset::union_of(std::span<const Dataset> operands) {
  if (operands.empty()) throw std::invalid_argument("union needs at least one dataset");
  Dataset out;
  out.kind_ = operands.front().kind_;
  for (const auto& d : operands) {
    if (d.kind_ != out.kind_)
      throw std::invalid_argument("union of mismatched element kinds '" + out.kind_ + "' and '" + d.kind_ + "'");
    out.parts_.insert(out.parts_.end(), d.parts_.begin(), d.parts_.end());
  }
  return out;
}

}  // namespace hflow::engine
