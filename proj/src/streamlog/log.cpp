#include "hflow/streamlog/log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <boost/crc.hpp>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <mutex>

namespace hflow::streamlog {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kRecordHeader = 12;  // length, crc, key_len

std::uint32_t load_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

void store_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void validate_topic_name(const std::string& name) {
  if (name.empty()) throw LogError("topic name must not be empty");
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
      throw LogError("topic name '" + name + "' has characters outside [A-Za-z0-9._-]");
}

std::string partition_stem(const std::string& topic, int partition) {
  return topic + "-" + std::to_string(partition);
}

// Writes a whole file atomically (write temp, rename).
void write_file_atomic(const fs::path& path, const std::string& data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw LogError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

std::uint32_t crc32c(std::string_view data) {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

class Log::PartitionLog {
 public:
  PartitionLog(fs::path dir, std::string topic, int partition, std::uint64_t segment_bytes)
      : dir_(std::move(dir)), topic_(std::move(topic)), partition_(partition), segment_bytes_(segment_bytes) {}

  ~PartitionLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void create() {
    open_segment(0);
    write_sidecar();
  }

  // Rebuilds the offset index from segment files. A torn record at the tail
  // of the newest segment is cut off; damage anywhere else is an error.
  void recover() {
    const std::string prefix = partition_stem(topic_, partition_) + "-";
    std::vector<std::pair<std::uint64_t, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir_)) {
      std::string name = entry.path().filename().string();
      if (name.size() <= prefix.size() + 4 || name.rfind(prefix, 0) != 0 || !name.ends_with(".seg")) continue;
      std::string base = name.substr(prefix.size(), name.size() - prefix.size() - 4);
      if (base.empty() || !std::all_of(base.begin(), base.end(), [](char c) { return c >= '0' && c <= '9'; }))
        continue;
      found.emplace_back(std::stoull(base), entry.path());
    }
    std::sort(found.begin(), found.end());

    for (std::size_t s = 0; s < found.size(); ++s) {
      const auto& [base, path] = found[s];
      if (base != index_.size())
        throw LogError("segment " + path.filename().string() + " does not continue offset " +
                       std::to_string(index_.size()));
      std::ifstream in(path, std::ios::binary);
      std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::uint64_t pos = 0;
      const bool last = s + 1 == found.size();
      while (pos < data.size()) {
        bool torn = data.size() - pos < kRecordHeader;
        std::uint32_t len = 0;
        if (!torn) {
          len = load_u32(data.data() + pos);
          torn = len < 8 || data.size() - pos - 4 < len;
        }
        if (!torn) {
          std::uint32_t crc = load_u32(data.data() + pos + 4);
          std::uint32_t key_len = load_u32(data.data() + pos + 8);
          torn = key_len > len - 8 || crc32c(std::string_view(data.data() + pos + 8, len - 4)) != crc;
        }
        if (torn) {
          if (!last) throw LogError("corrupt record in " + path.filename().string());
          fs::resize_file(path, pos);
          data.resize(pos);
          break;
        }
        index_.push_back(Loc{static_cast<std::uint32_t>(segments_.size()), pos, len + 4});
        pos += len + 4;
      }
      segments_.push_back(Segment{base, path, data.size()});
    }
    if (segments_.empty()) {
      open_segment(0);
    } else {
      fd_ = ::open(segments_.back().path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
      if (fd_ < 0) throw LogError("cannot reopen " + segments_.back().path.string());
    }

    fs::path side = sidecar_path();
    if (fs::exists(side)) {
      std::ifstream in(side);
      auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("next_offset")) throw LogError("unreadable sidecar " + side.string());
      auto recorded = j["next_offset"].get<std::uint64_t>();
      if (recorded > index_.size())
        throw LogError("partition " + partition_stem(topic_, partition_) + " lost records: sidecar says " +
                       std::to_string(recorded) + ", segments hold " + std::to_string(index_.size()));
    }
    write_sidecar();
  }

  std::uint64_t append(std::string_view key, std::string_view value) {
    const std::uint64_t body = 4 + 4 + key.size() + value.size();
    if (body + 4 > segment_bytes_) throw LogError("record larger than the segment size");
    std::string rec;
    rec.reserve(static_cast<std::size_t>(body + 4));
    store_u32(rec, static_cast<std::uint32_t>(body));
    std::string payload;
    payload.reserve(static_cast<std::size_t>(body - 4));
    store_u32(payload, static_cast<std::uint32_t>(key.size()));
    payload.append(key);
    payload.append(value);
    store_u32(rec, crc32c(payload));
    rec += payload;

    std::unique_lock lock(mu_);
    if (segments_.back().bytes > 0 && segments_.back().bytes + rec.size() > segment_bytes_)
      open_segment(index_.size());
    std::size_t done = 0;
    while (done < rec.size()) {
      ssize_t n = ::write(fd_, rec.data() + done, rec.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw LogError("append to " + segments_.back().path.string() + " failed");
      }
      done += static_cast<std::size_t>(n);
    }
    const std::uint64_t offset = index_.size();
    index_.push_back(Loc{static_cast<std::uint32_t>(segments_.size() - 1), segments_.back().bytes,
                         static_cast<std::uint32_t>(rec.size())});
    segments_.back().bytes += rec.size();
    write_sidecar();
    return offset;
  }

  std::uint64_t next() const {
    std::shared_lock lock(mu_);
    return index_.size();
  }

  std::vector<Record> read(std::uint64_t from, std::uint64_t until) const {
    std::vector<Loc> locs;
    std::vector<fs::path> paths;
    {
      std::shared_lock lock(mu_);
      if (from > until) throw RangeError("range start after end");
      if (until > index_.size())
        throw RangeError("range end " + std::to_string(until) + " beyond next offset " +
                         std::to_string(index_.size()) + " of " + partition_stem(topic_, partition_));
      locs.assign(index_.begin() + static_cast<std::ptrdiff_t>(from), index_.begin() + static_cast<std::ptrdiff_t>(until));
      for (const auto& s : segments_) paths.push_back(s.path);
    }
    std::vector<Record> out;
    out.reserve(locs.size());
    std::ifstream in;
    std::uint32_t open_seg = UINT32_MAX;
    std::string buf;
    for (std::size_t i = 0; i < locs.size(); ++i) {
      const Loc& loc = locs[i];
      if (loc.segment != open_seg) {
        in = std::ifstream(paths[loc.segment], std::ios::binary);
        open_seg = loc.segment;
      }
      buf.resize(loc.len);
      in.seekg(static_cast<std::streamoff>(loc.pos));
      in.read(buf.data(), loc.len);
      if (!in) throw LogError("short read in " + paths[loc.segment].string());
      std::uint32_t crc = load_u32(buf.data() + 4);
      std::uint32_t key_len = load_u32(buf.data() + 8);
      if (crc32c(std::string_view(buf.data() + 8, loc.len - 8)) != crc)
        throw LogError("checksum mismatch at offset " + std::to_string(from + i));
      out.push_back(Record{buf.substr(kRecordHeader, key_len), buf.substr(kRecordHeader + key_len), from + i});
    }
    return out;
  }

  std::vector<fs::path> segment_paths() const {
    std::shared_lock lock(mu_);
    std::vector<fs::path> out;
    for (const auto& s : segments_) out.push_back(s.path);
    return out;
  }

 private:
  struct Segment {
    std::uint64_t base;
    fs::path path;
    std::uint64_t bytes;
  };
  struct Loc {
    std::uint32_t segment;
    std::uint64_t pos;
    std::uint32_t len;
  };

  fs::path sidecar_path() const { return dir_ / (partition_stem(topic_, partition_) + ".json"); }

  void write_sidecar() const {
    nlohmann::json j{{"topic", topic_}, {"partition", partition_}, {"next_offset", index_.size()}};
    write_file_atomic(sidecar_path(), j.dump() + "\n");
  }

  void open_segment(std::uint64_t base) {
    fs::path path = dir_ / (partition_stem(topic_, partition_) + "-" + std::to_string(base) + ".seg");
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw LogError("cannot create segment " + path.string());
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
    segments_.push_back(Segment{base, path, 0});
  }

  fs::path dir_;
  std::string topic_;
  int partition_;
  std::uint64_t segment_bytes_;
  mutable std::shared_mutex mu_;
  std::vector<Segment> segments_;
  std::vector<Loc> index_;
  int fd_ = -1;
};

Log::Log(fs::path dir, Options options) : dir_(std::move(dir)), options_(options) {
  fs::create_directories(dir_);
  // Sidecars name the partitions that exist.
  std::map<std::string, std::vector<int>> seen;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("topic") || !j.contains("partition")) continue;
    seen[j["topic"].get<std::string>()].push_back(j["partition"].get<int>());
  }
  for (auto& [topic, parts] : seen) {
    std::sort(parts.begin(), parts.end());
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (parts[i] != static_cast<int>(i)) throw LogError("topic '" + topic + "' is missing partitions");
    auto& logs = topics_[topic];
    for (int p : parts) {
      logs.push_back(std::make_unique<PartitionLog>(dir_, topic, p, options_.segment_bytes));
      logs.back()->recover();
    }
  }
}

Log::~Log() = default;

void Log::create_topic(const std::string& name, int partitions) {
  validate_topic_name(name);
  if (partitions < 1) throw LogError("topic needs at least one partition");
  std::unique_lock lock(mu_);
  if (topics_.contains(name)) throw LogError("topic '" + name + "' already exists");
  std::vector<std::unique_ptr<PartitionLog>> logs;
  for (int p = 0; p < partitions; ++p) {
    logs.push_back(std::make_unique<PartitionLog>(dir_, name, p, options_.segment_bytes));
    logs.back()->create();
  }
  topics_.emplace(name, std::move(logs));
}

bool Log::has_topic(const std::string& name) const {
  std::shared_lock lock(mu_);
  return topics_.contains(name);
}

int Log::partition_count(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = topics_.find(name);
  if (it == topics_.end()) throw LogError("unknown topic '" + name + "'");
  return static_cast<int>(it->second.size());
}

std::vector<std::string> Log::topics() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, _] : topics_) out.push_back(name);
  return out;
}

Log::PartitionLog& Log::find(const std::string& topic, int partition) const {
  std::shared_lock lock(mu_);
  auto it = topics_.find(topic);
  if (it == topics_.end()) throw LogError("unknown topic '" + topic + "'");
  if (partition < 0 || partition >= static_cast<int>(it->second.size()))
    throw LogError("topic '" + topic + "' has no partition " + std::to_string(partition));
  return *it->second[static_cast<std::size_t>(partition)];
}

std::uint64_t Log::produce(const std::string& topic, int partition, std::string_view key, std::string_view value) {
  return find(topic, partition).append(key, value);
}

std::uint64_t Log::next_offset(const std::string& topic, int partition) const {
  return find(topic, partition).next();
}

std::vector<Record> Log::read_range(const OffsetRange& range) const {
  return find(range.topic, range.partition).read(range.from, range.until);
}

std::vector<fs::path> Log::segments(const std::string& topic, int partition) const {
  return find(topic, partition).segment_paths();
}

}  // namespace hflow::streamlog
