#include "hflow/engine/wire.hpp"

namespace hflow::engine::wire {
namespace {

void put_elements(Writer& w, const std::vector<Bytes>& elems) {
  w.put(static_cast<std::uint32_t>(elems.size()));
  for (const auto& e : elems) w.str(e);
}

std::vector<Bytes> get_elements(Reader& r) {
  auto n = r.get<std::uint32_t>();
  if (n > r.remaining() / 4) throw DecodeError("element count exceeds record");
  std::vector<Bytes> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.str());
  return out;
}

void put_stage(Writer& w, const Stage& s) {
  w.put(static_cast<std::uint8_t>(s.kind));
  w.put(static_cast<std::uint8_t>(s.task.kind));
  w.str(s.task.function);
  w.str(s.task.config);
  w.str(s.task.group_id);
  w.put(s.index);
  w.put(s.group_size);
  w.put(s.uid);
}

Stage get_stage(Reader& r) {
  Stage s;
  s.kind = static_cast<StageKind>(r.get<std::uint8_t>());
  s.task.kind = static_cast<TaskKind>(r.get<std::uint8_t>());
  s.task.function = r.str();
  s.task.config = r.str();
  s.task.group_id = r.str();
  s.index = r.get<std::uint32_t>();
  s.group_size = r.get<std::uint32_t>();
  s.uid = r.get<std::uint64_t>();
  return s;
}

}  // namespace

Bytes encode(const Message& m) {
  Writer w;
  w.put(kVersion);
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Hello>) {
          w.put(static_cast<std::uint8_t>(MsgType::hello));
          w.put(msg.pid);
        } else if constexpr (std::is_same_v<T, Task>) {
          w.put(static_cast<std::uint8_t>(MsgType::task));
          w.put(msg.job);
          w.put(msg.partition);
          w.put(static_cast<std::uint8_t>(msg.count_only));
          w.put(static_cast<std::uint32_t>(msg.stages.size()));
          for (const auto& s : msg.stages) put_stage(w, s);
          w.str(msg.env.rendezvous);
          w.str(msg.env.group);
          w.put(msg.env.rank);
          put_elements(w, msg.elements);
        } else if constexpr (std::is_same_v<T, Result>) {
          w.put(static_cast<std::uint8_t>(MsgType::result));
          w.put(msg.job);
          w.put(msg.partition);
          w.put(static_cast<std::uint8_t>(msg.ok));
          w.str(msg.error);
          w.put(msg.count);
          put_elements(w, msg.elements);
        } else {
          w.put(static_cast<std::uint8_t>(MsgType::shutdown));
        }
      },
      m);
  return w.take();
}

Message decode(std::string_view payload) {
  Reader r(payload);
  auto version = r.get<std::uint8_t>();
  if (version != kVersion) throw DecodeError("unsupported message version " + std::to_string(version));
  auto type = static_cast<MsgType>(r.get<std::uint8_t>());
  Message out;
  switch (type) {
    case MsgType::hello:
      out = Hello{r.get<std::uint32_t>()};
      break;
    case MsgType::task: {
      Task t;
      t.job = r.get<std::uint64_t>();
      t.partition = r.get<std::uint32_t>();
      t.count_only = r.get<std::uint8_t>() != 0;
      auto n = r.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) t.stages.push_back(get_stage(r));
      t.env.rendezvous = r.str();
      t.env.group = r.str();
      t.env.rank = r.get<std::uint32_t>();
      t.elements = get_elements(r);
      out = std::move(t);
      break;
    }
    case MsgType::result: {
      Result res;
      res.job = r.get<std::uint64_t>();
      res.partition = r.get<std::uint32_t>();
      res.ok = r.get<std::uint8_t>() != 0;
      res.error = r.str();
      res.count = r.get<std::uint64_t>();
      res.elements = get_elements(r);
      out = std::move(res);
      break;
    }
    case MsgType::shutdown:
      out = Shutdown{};
      break;
    default:
      throw DecodeError("unknown message type");
  }
  if (!r.done()) throw DecodeError("trailing bytes after message");
  return out;
}

void write_frame(net::Socket& sock, const Bytes& payload) {
  if (payload.size() > kMaxFrameBytes) throw DecodeError("frame too large");
  auto len = static_cast<std::uint32_t>(payload.size());
  std::string header(reinterpret_cast<const char*>(&len), 4);
  sock.send_all(header);
  sock.send_all(payload);
}

Bytes read_frame(net::Socket& sock, net::Millis timeout) {
  std::uint32_t len = 0;
  sock.recv_exact(std::as_writable_bytes(std::span(&len, 1)), timeout);
  if (len > kMaxFrameBytes) throw DecodeError("frame too large");
  Bytes payload(len, '\0');
  sock.recv_exact(std::as_writable_bytes(std::span(payload.data(), payload.size())), timeout);
  return payload;
}

}  // namespace hflow::engine::wire
