#include "hflow/builtin.hpp"

#include <mutex>

#include "hflow/bench/allreduce.hpp"
#include "hflow/ptycho/distributed.hpp"
#include "hflow/streamlog/microbatch.hpp"
#include "hflow/tomo/art.hpp"

namespace hflow {

void register_builtin_tasks() {
  static std::once_flag once;
  std::call_once(once, [] {
    bench::register_bench_tasks();
    streamlog::register_stream_tasks();
    ptycho::register_ptycho_tasks();
    tomo::register_tomo_tasks();
  });
}

}  // namespace hflow
