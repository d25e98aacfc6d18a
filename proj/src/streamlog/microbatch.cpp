#include "hflow/streamlog/microbatch.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <thread>

namespace hflow::streamlog {
namespace {

std::mutex decoders_mu;

std::map<std::string, DecoderEntry>& decoders() {
  static std::map<std::string, DecoderEntry> table{
      {"identity", {[](const std::string& v) { return v; }, std::string(engine::kind::kBytes)}},
      {"f32",
       {[](const std::string& v) {
          if (v.size() % sizeof(float) != 0) throw engine::DecodeError("value is not a whole number of f32");
          return v;
        },
        std::string(engine::kind::kF32Vec)}},
  };
  return table;
}

}  // namespace

const DecoderEntry& find_decoder(const std::string& id) {
  std::lock_guard lock(decoders_mu);
  auto it = decoders().find(id);
  if (it == decoders().end()) throw ConfigError("unknown decoder '" + id + "'");
  return it->second;
}

void add_decoder(const std::string& id, DecoderEntry entry) {
  std::lock_guard lock(decoders_mu);
  decoders()[id] = std::move(entry);
}

engine::Dataset dataset_from_ranges(const Log& log, const std::vector<OffsetRange>& ranges,
                                    const std::string& decoder) {
  const DecoderEntry& dec = find_decoder(decoder);
  std::vector<std::vector<engine::Bytes>> parts;
  parts.reserve(ranges.size());
  for (const auto& r : ranges) {
    auto& part = parts.emplace_back();
    for (auto& rec : log.read_range(r)) {
      try {
        part.push_back(dec.fn(rec.value));
      } catch (const std::exception& e) {
        throw engine::TaskError("cannot decode " + r.topic + "[" + std::to_string(r.partition) + "] offset " +
                                std::to_string(rec.offset) + ": " + e.what());
      }
    }
  }
  return engine::Dataset::from_partitions(std::move(parts), dec.kind);
}

BatchReport run_batch(engine::Context& ctx, const Log& log, const std::vector<std::string>& topics,
                      std::uint64_t start, std::uint64_t until, const engine::TaskSpec& task,
                      const std::string& decoder) {
  if (topics.empty()) throw ConfigError("batch needs at least one topic");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<engine::Dataset> per_topic;
  for (const auto& t : topics) per_topic.push_back(dataset_from_ranges(log, {OffsetRange{t, 0, start, until}}, decoder));
  auto joined = engine::Dataset::union_of(per_topic);

  BatchReport rep;
  rep.start = start;
  rep.until = until;
  rep.partitions = joined.num_partitions();
  for (const auto& p : joined.partitions()) rep.records += p.source->size();
  rep.results = ctx.collect(joined.map_partitions_with_index(task));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

StreamReport run_stream(engine::Context& ctx, Log& log, const StreamPlan& plan, const engine::TaskSpec& task,
                        const std::function<void(const BatchReport&)>& on_batch) {
  if (!log.has_topic(kControlTopic)) throw ConfigError(std::string("control topic '") + kControlTopic + "' missing");
  if (plan.topics.empty()) throw ConfigError("stream needs at least one topic");
  for (const auto& t : plan.topics)
    if (!log.has_topic(t)) throw ConfigError("stream topic '" + t + "' missing");
  find_decoder(plan.decoder);

  std::uint64_t cursor = 0;  // control records consumed
  auto poll_control = [&](const std::string& wanted) {
    const auto next = log.next_offset(kControlTopic, 0);
    bool seen = false;
    for (auto& rec : log.read_range({kControlTopic, 0, cursor, next})) {
      cursor = rec.offset + 1;
      if (rec.key == wanted) {
        seen = true;
        break;
      }
    }
    return seen;
  };

  const auto waited_from = std::chrono::steady_clock::now();
  while (!poll_control("init")) {
    if (plan.init_timeout && std::chrono::steady_clock::now() - waited_from >= *plan.init_timeout)
      throw ConfigError("no init record on the control topic");
    std::this_thread::sleep_for(plan.interval);
  }

  StreamReport report;
  std::uint64_t start = plan.start;
  for (;;) {
    const bool stop = poll_control("stop");
    std::uint64_t until = UINT64_MAX;
    for (const auto& t : plan.topics) until = std::min(until, log.next_offset(t, 0));
    if (until > start) {
      auto rep = run_batch(ctx, log, plan.topics, start, until, task, plan.decoder);
      start = until;
      report.batches.push_back(rep);
      if (on_batch) on_batch(report.batches.back());
    } else if (!stop) {
      ++report.skipped_intervals;
    }
    if (stop) return report;
    std::this_thread::sleep_for(plan.interval);
  }
}

void register_stream_tasks() {
  engine::TaskRegistry::global().add_partition(
      kStreamSumTask, [](engine::TaskContext& ctx, std::vector<engine::Bytes> elems) {
        std::vector<float> acc{0.0f, 0.0f};
        for (const auto& e : elems) {
          for (float v : engine::decode_vec<float>(e)) {
            acc[0] += v;
            acc[1] += 1.0f;
          }
        }
        ctx.communicator().allreduce(std::span(acc), collectives::ReduceOp::sum);
        return std::vector<engine::Bytes>{engine::encode_vec<float>(acc)};
      });
}

}  // namespace hflow::streamlog
