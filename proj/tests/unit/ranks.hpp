#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "hflow/collectives/communicator.hpp"
#include "hflow/rendezvous/server.hpp"

// Runs `body(comm)` on `size` threads, each with its own session and
// communicator, and rethrows the first failure.
inline void run_ranks(int size, const std::function<void(hflow::collectives::Communicator&)>& body) {
  using namespace hflow;
  rendezvous::Server srv({"127.0.0.1", 0}, {{"world", size}});
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(size));
  std::vector<std::thread> ts;
  for (int r = 0; r < size; ++r) {
    ts.emplace_back([&, r] {
      try {
        auto session = rendezvous::ClientSession::init(srv.endpoint(), "world", r);
        auto comm = collectives::Communicator::connect(session);
        body(comm);
        session.finalize();
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    });
  }
  for (auto& t : ts) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}
