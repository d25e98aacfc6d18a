#pragma once

#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "hflow/collectives/frame.hpp"
#include "hflow/net/socket.hpp"
#include "hflow/rendezvous/client.hpp"

namespace hflow::collectives {

class CollectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
concept Reducible = std::same_as<T, float> || std::same_as<T, double>;

/// Full-mesh communicator built from a rendezvous session. Rank r listens,
/// publishes its endpoint as `ep_<r>`, and after a barrier dials every
/// higher rank while accepting from every lower one.
///
/// Use from one thread at a time. Collectives must be entered by every rank
/// in the same order.
class Communicator {
 public:
  struct Options {
    net::Millis step_timeout{30'000};
  };

  static Communicator connect(rendezvous::ClientSession& session, Options options);
  static Communicator connect(rendezvous::ClientSession& session) { return connect(session, Options{}); }

  Communicator(Communicator&&) noexcept = default;
  Communicator& operator=(Communicator&&) noexcept = default;

  int rank() const { return rank_; }
  int size() const { return size_; }
  const std::vector<net::Endpoint>& peer_endpoints() const { return endpoints_; }
  /// Number of live peer connections held by this rank (size - 1).
  std::size_t connection_count() const;
  void set_step_timeout(net::Millis t) { options_.step_timeout = t; }

  /// In-place elementwise reduction over all ranks: ring reduce-scatter
  /// followed by ring allgather. Every rank ends with identical bits.
  template <Reducible T>
  void allreduce(std::span<T> buf, ReduceOp op);

  std::vector<float> allreduce(std::span<const float> in, ReduceOp op) {
    std::vector<float> out(in.begin(), in.end());
    allreduce(std::span<float>(out), op);
    return out;
  }

  /// Binomial-tree broadcast; non-root buffers are resized to the root's length.
  template <Reducible T>
  void broadcast(int root, std::vector<T>& buf);

  void barrier();

 private:
  Communicator() = default;

  void send_frame(int peer, const FrameHeader& h, std::span<const std::byte> payload);
  FrameHeader recv_header(int peer, Opcode expect, DType dtype);
  void check_header(const FrameHeader& h, Opcode expect, DType dtype, std::uint32_t payload, int peer) const;
  void announce(DType dtype, ReduceOp op, std::uint64_t count);
  [[noreturn]] void fail(const std::string& what) const;

  int rank_ = 0;
  int size_ = 1;
  std::uint32_t seq_ = 0;
  Options options_;
  std::vector<net::Endpoint> endpoints_;
  std::vector<net::Socket> peers_;
};

extern template void Communicator::allreduce<float>(std::span<float>, ReduceOp);
extern template void Communicator::allreduce<double>(std::span<double>, ReduceOp);
extern template void Communicator::broadcast<float>(int, std::vector<float>&);
extern template void Communicator::broadcast<double>(int, std::vector<double>&);

}  // namespace hflow::collectives
