#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hflow/engine/context.hpp"
#include "hflow/streamlog/log.hpp"

namespace hflow::streamlog {

class ConfigError : public LogError {
 public:
  using LogError::LogError;
};

/// Reserved topic carrying "init" and "stop" control records.
inline constexpr const char* kControlTopic = "_control";

/// Turns one record value into a dataset element. Throws on malformed input.
using Decoder = std::function<engine::Bytes(const std::string& value)>;

struct DecoderEntry {
  Decoder fn;
  std::string kind;  // element kind of the resulting dataset
};

/// "identity" keeps the raw value; "f32" checks for whole little-endian floats.
const DecoderEntry& find_decoder(const std::string& id);
void add_decoder(const std::string& id, DecoderEntry entry);

/// One partition per range, elements are decoded values in offset order.
/// Ranges are read on the driver.
engine::Dataset dataset_from_ranges(const Log& log, const std::vector<OffsetRange>& ranges,
                                    const std::string& decoder);

struct BatchReport {
  std::uint64_t start = 0;
  std::uint64_t until = 0;
  std::size_t partitions = 0;
  std::uint64_t records = 0;
  std::vector<engine::Bytes> results;  // collected task output, partition order
  double seconds = 0;
};

/// Reads [start, until) of partition 0 of every topic, unions the per-topic
/// datasets and runs `task` over them with map_partitions_with_index.
BatchReport run_batch(engine::Context& ctx, const Log& log, const std::vector<std::string>& topics,
                      std::uint64_t start, std::uint64_t until, const engine::TaskSpec& task,
                      const std::string& decoder = "identity");

struct StreamPlan {
  std::vector<std::string> topics;
  std::chrono::milliseconds interval{200};
  std::string decoder = "identity";
  std::uint64_t start = 0;
  std::optional<std::chrono::milliseconds> init_timeout;  // unset: wait forever
};

struct StreamReport {
  std::vector<BatchReport> batches;
  std::uint64_t skipped_intervals = 0;  // ticks with nothing new
};

/// Waits for "init" on the control topic, then once per interval runs a batch
/// over every offset that all topics have reached. A "stop" record ends the
/// stream after the batch of the tick that saw it; batches never overlap.
StreamReport run_stream(engine::Context& ctx, Log& log, const StreamPlan& plan, const engine::TaskSpec& task,
                        const std::function<void(const BatchReport&)>& on_batch = {});

/// Collective task: every element is an f32 vector; each rank contributes
/// [sum, count] of its values and returns the allreduced pair.
inline constexpr const char* kStreamSumTask = "stream.allreduce_sum";
void register_stream_tasks();

}  // namespace hflow::streamlog
