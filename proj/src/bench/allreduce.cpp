#include "hflow/bench/allreduce.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "hflow/streamlog/log.hpp"

namespace hflow::bench {
namespace {

using Clock = std::chrono::steady_clock;

engine::Bytes config(std::size_t n, int repeats) {
  return engine::Writer().put<std::uint64_t>(n).put<std::int32_t>(repeats).take();
}

std::vector<float> arange(std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(i);
  return v;
}

double max_rel_error(const std::vector<float>& got, const std::vector<float>& want) {
  if (got.size() != want.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = std::abs(static_cast<double>(got[i]) - want[i]);
    worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(want[i]))));
  }
  return worst;
}

double checksum(const std::vector<float>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

std::vector<engine::Bytes> rank_ids(int workers) {
  std::vector<engine::Bytes> ranks;
  for (int r = 0; r < workers; ++r) ranks.push_back(engine::encode_i64(r));
  return ranks;
}

}  // namespace

std::vector<float> oracle_driver(int workers, std::size_t n) {
  std::vector<double> acc(n, 0.0);
  for (int r = 0; r < workers; ++r)
    for (std::size_t i = 0; i < n; ++i) acc[i] += i + 1 == n ? 5.0 : static_cast<double>(i);
  return {acc.begin(), acc.end()};
}

std::vector<float> oracle_collective(int workers, std::size_t n, int repeats) {
  std::vector<double> acc(n, 0.0);
  for (int r = 0; r < workers; ++r)
    for (std::size_t i = 0; i < n; ++i)
      acc[i] += i + 1 == n ? static_cast<double>(repeats - 1) : static_cast<double>(i);
  return {acc.begin(), acc.end()};
}

AllreduceRow bench_driver_collect(engine::Context& ctx, int workers, std::size_t n, int repeats) {
  if (n == 0 || repeats < 1) throw std::invalid_argument("bench needs n >= 1 and repeats >= 1");
  auto ds = engine::Dataset::parallelize(rank_ids(workers), workers, std::string(engine::kind::kI64))
                .map(engine::TaskSpec::plain("bench.sendbuf", config(n, repeats)), std::string(engine::kind::kF32Vec));
  AllreduceRow row{"driver_collect", workers};
  std::vector<float> sum;
  double total = 0;
  for (int k = 0; k < repeats; ++k) {
    const auto t0 = Clock::now();
    auto buffers = ctx.collect(ds);
    sum.assign(n, 0.0f);
    for (const auto& b : buffers) {
      auto v = engine::decode_vec<float>(b);
      if (v.size() != n) throw std::runtime_error("worker returned a buffer of the wrong length");
      for (std::size_t i = 0; i < n; ++i) sum[i] += v[i];
    }
    total += std::chrono::duration<double>(Clock::now() - t0).count();
  }
  row.seconds = total / repeats;
  row.max_rel_error = max_rel_error(sum, oracle_driver(workers, n));
  row.checksum = checksum(sum);
  return row;
}

AllreduceRow bench_collective(engine::Context& ctx, int workers, std::size_t n, int repeats) {
  if (n == 0 || repeats < 1) throw std::invalid_argument("bench needs n >= 1 and repeats >= 1");
  auto ds = engine::Dataset::parallelize(rank_ids(workers), workers, std::string(engine::kind::kI64))
                .map_partitions_with_index(engine::TaskSpec::collective("bench.allreduce", config(n, repeats)));
  auto out = ctx.collect(ds);
  AllreduceRow row{"collective_allreduce", workers};
  if (out.size() != static_cast<std::size_t>(workers)) throw std::runtime_error("collective bench lost ranks");
  // per rank: seconds, max error, checksum, CRC-32C of the result bytes
  std::vector<std::vector<double>> reports;
  for (const auto& b : out) reports.push_back(engine::decode_vec<double>(b));
  for (const auto& r : reports) {
    row.seconds = std::max(row.seconds, r[0]);
    row.max_rel_error = std::max(row.max_rel_error, r[1]);
    row.ranks_agree = row.ranks_agree && r[2] == reports[0][2] && r[3] == reports[0][3];
  }
  row.checksum = reports[0][2];
  return row;
}

void register_bench_tasks() {
  auto& reg = engine::TaskRegistry::global();
  reg.add_map("bench.sendbuf", [](const engine::Bytes&, const engine::Bytes& cfg) {
    engine::Reader r(cfg);
    const auto n = r.get<std::uint64_t>();
    auto v = arange(n);
    v[n - 1] = 5.0f;
    return engine::encode_vec<float>(v);
  });
  reg.add_partition("bench.allreduce", [](engine::TaskContext& ctx, std::vector<engine::Bytes>) {
    engine::Reader r(ctx.config());
    const auto n = r.get<std::uint64_t>();
    const auto repeats = r.get<std::int32_t>();
    auto& comm = ctx.communicator();
    auto sendbuf = arange(n);
    std::vector<float> recvbuf;
    comm.barrier();
    const auto t0 = Clock::now();
    for (int i = 0; i < repeats; ++i) {
      sendbuf[n - 1] = static_cast<float>(i);
      recvbuf = comm.allreduce(std::span<const float>(sendbuf), collectives::ReduceOp::sum);
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count() / repeats;
    const double err = max_rel_error(recvbuf, oracle_collective(comm.size(), n, repeats));
    const auto crc = streamlog::crc32c(
        std::string_view(reinterpret_cast<const char*>(recvbuf.data()), recvbuf.size() * sizeof(float)));
    std::vector<double> report{secs, err, checksum(recvbuf), static_cast<double>(crc)};
    return std::vector<engine::Bytes>{engine::encode_vec<double>(report)};
  });
}

}  // namespace hflow::bench
