#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hflow/engine/context.hpp"

namespace hflow::bench {

struct AllreduceRow {
  std::string scenario;  // driver_collect | collective_allreduce
  int workers = 0;
  double seconds = 0;   // mean per repeat
  double checksum = 0;  // sum of the verified result vector
  double max_rel_error = 0;
  bool ranks_agree = true;  // collective: every rank holds identical bytes
};

/// Driver path: every partition builds arange(n) with [n-1] = 5 and the
/// driver sums the collected buffers. Collective path: every rank builds
/// arange(n), sets [n-1] = i and allreduces, for i < repeats. Both results
/// are checked against a serial oracle.
AllreduceRow bench_driver_collect(engine::Context& ctx, int workers, std::size_t n, int repeats);
AllreduceRow bench_collective(engine::Context& ctx, int workers, std::size_t n, int repeats);

/// Expected sums for the two scenarios.
std::vector<float> oracle_driver(int workers, std::size_t n);
std::vector<float> oracle_collective(int workers, std::size_t n, int repeats);

void register_bench_tasks();

}  // namespace hflow::bench
