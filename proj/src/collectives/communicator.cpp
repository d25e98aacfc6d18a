#include "hflow/collectives/communicator.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <string>

namespace hflow::collectives {
namespace {

using HeaderBytes = std::array<std::byte, kFrameHeaderBytes>;

std::string endpoint_key(int rank) { return "ep_" + std::to_string(rank); }

template <class T>
void reduce_into(std::span<T> acc, std::span<const T> in, ReduceOp op) {
  switch (op) {
    case ReduceOp::sum:
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += in[i];
      break;
    case ReduceOp::min:
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::min(acc[i], in[i]);
      break;
    case ReduceOp::max:
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::max(acc[i], in[i]);
      break;
  }
}

int wrap(int r, int p) { return ((r % p) + p) % p; }

}  // namespace

namespace detail {

struct Chunking {
  std::size_t base;
  std::size_t count;
  int parts;

  std::size_t begin(int c) const { return static_cast<std::size_t>(c) * base; }
  std::size_t length(int c) const { return c == parts - 1 ? count - begin(c) : base; }
};

}  // namespace detail

Communicator Communicator::connect(rendezvous::ClientSession& session, Options options) {
  using rendezvous::RendezvousError;
  Communicator comm;
  comm.rank_ = session.rank();
  comm.size_ = session.size();
  comm.options_ = options;
  comm.endpoints_.resize(static_cast<std::size_t>(comm.size_));
  comm.peers_.resize(static_cast<std::size_t>(comm.size_));

  try {
    net::Endpoint host = session.local_endpoint();
    auto listener = net::Listener::bind(net::Endpoint{host.host, 0}, comm.size_ + 8);
    net::Endpoint mine{host.host, listener.local_endpoint().port};
    session.put(endpoint_key(comm.rank_), mine.str());
    session.barrier();

    for (int r = 0; r < comm.size_; ++r) {
      auto value = session.get(endpoint_key(r));
      if (!value) throw CollectiveError("rank " + std::to_string(r) + " published no endpoint");
      comm.endpoints_[static_cast<std::size_t>(r)] = net::Endpoint::parse(*value);
    }

    for (int r = comm.rank_ + 1; r < comm.size_; ++r) {
      try {
        comm.peers_[static_cast<std::size_t>(r)] =
            net::connect(comm.endpoints_[static_cast<std::size_t>(r)], options.step_timeout);
      } catch (const net::NetError& e) {
        throw CollectiveError("cannot reach rank " + std::to_string(r) + ": " + e.what());
      }
      FrameHeader hello{Opcode::hello, DType::f32, 0, static_cast<std::uint32_t>(comm.rank_), 0};
      comm.send_frame(r, hello, {});
    }
    for (int accepted = 0; accepted < comm.rank_; ++accepted) {
      auto sock = listener.accept(options.step_timeout);
      if (!sock) throw CollectiveError("listener closed while accepting peers");
      HeaderBytes raw;
      sock->recv_exact(raw, options.step_timeout);
      FrameHeader hello;
      if (!hello.read(raw) || hello.opcode != Opcode::hello)
        throw CollectiveError("bad hello from connecting peer");
      auto from = static_cast<int>(hello.sequence);
      if (from < 0 || from >= comm.rank_ || comm.peers_[static_cast<std::size_t>(from)].valid())
        throw CollectiveError("unexpected hello from rank " + std::to_string(from));
      comm.peers_[static_cast<std::size_t>(from)] = std::move(*sock);
    }
  } catch (const RendezvousError& e) {
    throw CollectiveError(std::string("communicator bootstrap failed: ") + e.what());
  } catch (const net::NetError& e) {
    throw CollectiveError(std::string("communicator bootstrap failed: ") + e.what());
  }
  return comm;
}

std::size_t Communicator::connection_count() const {
  return static_cast<std::size_t>(std::count_if(peers_.begin(), peers_.end(), [](const auto& s) { return s.valid(); }));
}

void Communicator::fail(const std::string& what) const {
  throw CollectiveError("rank " + std::to_string(rank_) + ": " + what);
}

void Communicator::send_frame(int peer, const FrameHeader& h, std::span<const std::byte> payload) {
  HeaderBytes raw;
  h.write(raw);
  auto& sock = peers_[static_cast<std::size_t>(peer)];
  try {
    sock.send_all(raw, options_.step_timeout);
    if (!payload.empty()) sock.send_all(payload, options_.step_timeout);
  } catch (const net::NetError& e) {
    fail("send to rank " + std::to_string(peer) + " failed: " + e.what());
  }
}

void Communicator::check_header(const FrameHeader& h, Opcode expect, DType dtype, std::uint32_t payload,
                                int peer) const {
  if (h.opcode != expect || h.dtype != dtype)
    fail("unexpected frame kind from rank " + std::to_string(peer));
  if (h.sequence != seq_)
    fail("sequence mismatch from rank " + std::to_string(peer) + " (got " + std::to_string(h.sequence) +
         ", expected " + std::to_string(seq_) + ")");
  if (h.payload_bytes != payload)
    fail("payload length mismatch from rank " + std::to_string(peer));
}

FrameHeader Communicator::recv_header(int peer, Opcode expect, DType dtype) {
  HeaderBytes raw;
  try {
    peers_[static_cast<std::size_t>(peer)].recv_exact(raw, options_.step_timeout);
  } catch (const net::NetError& e) {
    fail("receive from rank " + std::to_string(peer) + " failed: " + e.what());
  }
  FrameHeader h;
  if (!h.read(raw)) fail("bad frame magic from rank " + std::to_string(peer));
  if (h.opcode != expect || h.dtype != dtype) fail("unexpected frame kind from rank " + std::to_string(peer));
  if (h.sequence != seq_) fail("sequence mismatch from rank " + std::to_string(peer));
  return h;
}

// Every rank tells every other rank its element count, type and op before
// any data moves, so a mismatch is reported on all ranks instead of hanging.
void Communicator::announce(DType dtype, ReduceOp op, std::uint64_t count) {
  if (count > std::numeric_limits<std::uint32_t>::max()) fail("buffer too large for one collective");
  auto n = static_cast<std::uint32_t>(count);
  FrameHeader h{Opcode::announce, dtype, static_cast<std::uint16_t>(op), seq_, 4};
  for (int p = 0; p < size_; ++p)
    if (p != rank_) send_frame(p, h, std::as_bytes(std::span(&n, 1)));

  std::string mismatch;
  for (int p = 0; p < size_; ++p) {
    if (p == rank_) continue;
    FrameHeader got = recv_header(p, Opcode::announce, dtype);
    if (got.payload_bytes != 4) fail("bad announce from rank " + std::to_string(p));
    std::uint32_t theirs = 0;
    try {
      peers_[static_cast<std::size_t>(p)].recv_exact(std::as_writable_bytes(std::span(&theirs, 1)),
                                                     options_.step_timeout);
    } catch (const net::NetError& e) {
      fail("receive from rank " + std::to_string(p) + " failed: " + e.what());
    }
    if (theirs != n && mismatch.empty())
      mismatch = "length mismatch: rank " + std::to_string(p) + " has " + std::to_string(theirs) +
                 " elements, rank " + std::to_string(rank_) + " has " + std::to_string(n);
    if (got.op != static_cast<std::uint16_t>(op) && mismatch.empty())
      mismatch = "reduce op mismatch with rank " + std::to_string(p);
  }
  if (!mismatch.empty()) fail(mismatch);
}

template <Reducible T>
void Communicator::allreduce(std::span<T> buf, ReduceOp op) {
  if (size_ == 1) return;
  ++seq_;
  constexpr DType dt = dtype_of<T>();
  announce(dt, op, buf.size());

  const int right = wrap(rank_ + 1, size_);
  const int left = wrap(rank_ - 1, size_);
  const detail::Chunking chunks{buf.size() / static_cast<std::size_t>(size_), buf.size(), size_};
  const std::size_t max_chunk = chunks.length(size_ - 1);

  std::vector<std::byte> out(kFrameHeaderBytes + max_chunk * sizeof(T));
  std::vector<std::byte> in(kFrameHeaderBytes + max_chunk * sizeof(T));
  std::vector<T> incoming(max_chunk);

  auto step = [&](Opcode code, int send_chunk, int recv_chunk) -> std::span<const T> {
    const std::size_t send_len = chunks.length(send_chunk);
    const std::size_t recv_len = chunks.length(recv_chunk);
    FrameHeader h{code, dt, static_cast<std::uint16_t>(op), seq_, static_cast<std::uint32_t>(send_len * sizeof(T))};
    h.write(std::span<std::byte, kFrameHeaderBytes>(out.data(), kFrameHeaderBytes));
    std::memcpy(out.data() + kFrameHeaderBytes, buf.data() + chunks.begin(send_chunk), send_len * sizeof(T));
    auto out_span = std::span<const std::byte>(out.data(), kFrameHeaderBytes + send_len * sizeof(T));
    auto in_span = std::span<std::byte>(in.data(), kFrameHeaderBytes + recv_len * sizeof(T));
    try {
      peers_[static_cast<std::size_t>(left)].exchange(peers_[static_cast<std::size_t>(right)], out_span, in_span,
                                                      options_.step_timeout);
    } catch (const net::NetError& e) {
      fail(std::string("ring step failed: ") + e.what());
    }
    FrameHeader got;
    if (!got.read(std::span<const std::byte, kFrameHeaderBytes>(in.data(), kFrameHeaderBytes)))
      fail("bad frame magic from rank " + std::to_string(left));
    check_header(got, code, dt, static_cast<std::uint32_t>(recv_len * sizeof(T)), left);
    std::memcpy(incoming.data(), in.data() + kFrameHeaderBytes, recv_len * sizeof(T));
    return std::span<const T>(incoming.data(), recv_len);
  };

  // After P-1 steps rank r holds the complete reduction of chunk r+1.
  for (int s = 0; s < size_ - 1; ++s) {
    const int send_chunk = wrap(rank_ - s, size_);
    const int recv_chunk = wrap(rank_ - s - 1, size_);
    auto got = step(Opcode::reduce_scatter, send_chunk, recv_chunk);
    reduce_into(buf.subspan(chunks.begin(recv_chunk), chunks.length(recv_chunk)), got, op);
  }
  for (int s = 0; s < size_ - 1; ++s) {
    const int send_chunk = wrap(rank_ + 1 - s, size_);
    const int recv_chunk = wrap(rank_ - s, size_);
    auto got = step(Opcode::allgather, send_chunk, recv_chunk);
    std::copy(got.begin(), got.end(), buf.begin() + static_cast<std::ptrdiff_t>(chunks.begin(recv_chunk)));
  }
}

template <Reducible T>
void Communicator::broadcast(int root, std::vector<T>& buf) {
  if (root < 0 || root >= size_)
    throw std::invalid_argument("broadcast root " + std::to_string(root) + " out of range for size " +
                                std::to_string(size_));
  if (size_ == 1) return;
  ++seq_;
  constexpr DType dt = dtype_of<T>();
  const int vrank = wrap(rank_ - root, size_);

  int mask = 1;
  while (mask < size_) {
    if (vrank & mask) {
      const int parent = wrap(vrank - mask + root, size_);
      FrameHeader h = recv_header(parent, Opcode::broadcast, dt);
      if (h.payload_bytes % sizeof(T) != 0) fail("broadcast payload not a whole number of elements");
      buf.resize(h.payload_bytes / sizeof(T));
      try {
        peers_[static_cast<std::size_t>(parent)].recv_exact(std::as_writable_bytes(std::span(buf)),
                                                            options_.step_timeout);
      } catch (const net::NetError& e) {
        fail("receive from rank " + std::to_string(parent) + " failed: " + e.what());
      }
      break;
    }
    mask <<= 1;
  }
  mask >>= 1;
  while (mask > 0) {
    if (vrank + mask < size_) {
      const int child = wrap(vrank + mask + root, size_);
      FrameHeader h{Opcode::broadcast, dt, 0, seq_, static_cast<std::uint32_t>(buf.size() * sizeof(T))};
      send_frame(child, h, std::as_bytes(std::span(buf)));
    }
    mask >>= 1;
  }
}

// A zero-length allreduce: the announce round is all-to-all, so nobody
// leaves before everybody has entered.
void Communicator::barrier() { allreduce(std::span<float>{}, ReduceOp::sum); }

template void Communicator::allreduce<float>(std::span<float>, ReduceOp);
template void Communicator::allreduce<double>(std::span<double>, ReduceOp);
template void Communicator::broadcast<float>(int, std::vector<float>&);
template void Communicator::broadcast<double>(int, std::vector<double>&);

}  // namespace hflow::collectives
