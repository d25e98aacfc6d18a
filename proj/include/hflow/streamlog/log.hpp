#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hflow::streamlog {

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested window reaches past the end of the log; retry later.
class RangeError : public LogError {
 public:
  using LogError::LogError;
};

struct Record {
  std::string key;
  std::string value;
  std::uint64_t offset = 0;

  bool operator==(const Record&) const = default;
};

struct OffsetRange {
  std::string topic;
  int partition = 0;
  std::uint64_t from = 0;   // inclusive
  std::uint64_t until = 0;  // exclusive
};

/// CRC-32C (Castagnoli) as stored in segment records.
std::uint32_t crc32c(std::string_view data);

/// Append-only topic/partition log persisted as segment files.
///
/// On disk, every partition is a series of `<topic>-<partition>-<base>.seg`
/// files holding little-endian records
///   [u32 length][u32 crc32c][u32 key_len][key][value]
/// where length counts the bytes after the length field and the CRC covers
/// key_len, key and value. `<topic>-<partition>.json` holds next_offset.
/// Opening a directory recovers every partition from its segments.
class Log {
 public:
  struct Options {
    std::uint64_t segment_bytes = 64ull << 20;
  };

  explicit Log(std::filesystem::path dir) : Log(std::move(dir), Options{}) {}
  Log(std::filesystem::path dir, Options options);
  ~Log();
  Log(const Log&) = delete;
  Log& operator=(const Log&) = delete;

  void create_topic(const std::string& name, int partitions);
  bool has_topic(const std::string& name) const;
  int partition_count(const std::string& name) const;
  std::vector<std::string> topics() const;

  /// Appends one record and returns its offset. Safe to call concurrently.
  std::uint64_t produce(const std::string& topic, int partition, std::string_view key, std::string_view value);
  std::uint64_t next_offset(const std::string& topic, int partition) const;
  /// Records with from <= offset < until, in offset order.
  std::vector<Record> read_range(const OffsetRange& range) const;

  const std::filesystem::path& directory() const { return dir_; }
  /// Segment files currently backing one partition, oldest first.
  std::vector<std::filesystem::path> segments(const std::string& topic, int partition) const;

 private:
  class PartitionLog;
  PartitionLog& find(const std::string& topic, int partition) const;

  std::filesystem::path dir_;
  Options options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::vector<std::unique_ptr<PartitionLog>>> topics_;
};

}  // namespace hflow::streamlog
