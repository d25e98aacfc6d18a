#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hflow/engine/codec.hpp"
#include "hflow/engine/dataset.hpp"
#include "hflow/net/socket.hpp"

// Driver <-> worker messages. Each frame is a u32 little-endian length
// followed by a record: u8 version, u8 message type, then type-specific
// fields (see encode()).
namespace hflow::engine::wire {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

enum class MsgType : std::uint8_t { hello = 1, task = 2, result = 3, shutdown = 4 };

struct Hello {
  std::uint32_t pid = 0;
};

/// Environment a collective stage needs on the worker.
struct CollectiveEnv {
  std::string rendezvous;  // host:port, becomes RDV_PORT
  std::string group;
  std::uint32_t rank = 0;  // becomes RDV_RANK
};

struct Task {
  std::uint64_t job = 0;
  std::uint32_t partition = 0;
  bool count_only = false;
  std::vector<Stage> stages;
  CollectiveEnv env;
  std::vector<Bytes> elements;
};

struct Result {
  std::uint64_t job = 0;
  std::uint32_t partition = 0;
  bool ok = true;
  std::string error;
  std::uint64_t count = 0;
  std::vector<Bytes> elements;  // empty when the task was count-only
};

struct Shutdown {};

using Message = std::variant<Hello, Task, Result, Shutdown>;

Bytes encode(const Message& m);
Message decode(std::string_view payload);

void write_frame(net::Socket& sock, const Bytes& payload);
Bytes read_frame(net::Socket& sock, net::Millis timeout = net::kNoTimeout);

inline void send(net::Socket& sock, const Message& m) { write_frame(sock, encode(m)); }
inline Message receive(net::Socket& sock, net::Millis timeout = net::kNoTimeout) {
  return decode(read_frame(sock, timeout));
}

}  // namespace hflow::engine::wire
