#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Line protocol shared by the rendezvous server and its clients.
//
// A record is one line of space-separated `key=value` tokens terminated by
// '\n'; the first token is always `cmd=<name>`. Bytes outside 0x21..0x7E, and
// the three delimiters '=', '%', ' ', are written as %XX (uppercase hex).
namespace hflow::rendezvous {

inline constexpr std::size_t kMaxKeyBytes = 256;
inline constexpr std::size_t kMaxValueBytes = 4096;
inline constexpr std::size_t kMaxLineBytes = 16 * 1024;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string percent_encode(std::string_view raw);
/// Throws ProtocolError on a truncated or non-hex escape.
std::string percent_decode(std::string_view encoded);

class Record {
 public:
  Record() = default;
  explicit Record(std::string cmd) { fields_.emplace_back("cmd", std::move(cmd)); }

  /// Appends a field; `value` is stored decoded and encoded on output.
  Record& add(std::string key, std::string value);

  const std::string& cmd() const;
  std::optional<std::string> find(std::string_view key) const;
  /// Like find(), but throws ProtocolError if missing.
  const std::string& at(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>>& fields() const { return fields_; }

  /// Encoded line including the trailing newline.
  std::string encode() const;
  /// Parses a line without its newline.
  static Record parse(std::string_view line);

  bool operator==(const Record&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

// Reason tokens carried in *_err / group_err responses.
namespace reason {
inline constexpr std::string_view kUnknownGroup = "unknown_group";
inline constexpr std::string_view kRankOutOfRange = "rank_out_of_range";
inline constexpr std::string_view kDuplicateRank = "duplicate_rank";
inline constexpr std::string_view kAlreadyInitialized = "already_initialized";
inline constexpr std::string_view kGroupFailed = "group_failed";
inline constexpr std::string_view kNotInitialized = "not_initialized";
inline constexpr std::string_view kDuplicateKey = "duplicate_key";
inline constexpr std::string_view kKeyTooLong = "key_too_long";
inline constexpr std::string_view kValueTooLong = "value_too_long";
inline constexpr std::string_view kPeerDisconnected = "peer_disconnected";
inline constexpr std::string_view kPeerFinalized = "peer_finalized";
inline constexpr std::string_view kServerShutdown = "server_shutdown";
inline constexpr std::string_view kMalformed = "malformed";
inline constexpr std::string_view kUnknownCommand = "unknown_command";
}  // namespace reason

}  // namespace hflow::rendezvous
