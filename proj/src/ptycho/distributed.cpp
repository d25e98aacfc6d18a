#include "hflow/ptycho/distributed.hpp"

namespace hflow::ptycho {
namespace {

using engine::Bytes;

void put_real(engine::Writer& w, const Real& a) {
  w.put<std::int64_t>(a.rows()).put<std::int64_t>(a.cols());
  w.array(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Real get_real(engine::Reader& r) {
  const auto rows = r.get<std::int64_t>(), cols = r.get<std::int64_t>();
  auto v = r.array<double>();
  if (rows < 0 || cols < 0 || v.size() != static_cast<std::size_t>(rows * cols))
    throw engine::DecodeError("grid size does not match its dimensions");
  return Eigen::Map<const Real>(v.data(), rows, cols);
}

void put_field(engine::Writer& w, const Field& f) {
  w.put<std::int64_t>(f.rows()).put<std::int64_t>(f.cols());
  w.array(std::span<const double>(reinterpret_cast<const double*>(f.data()), static_cast<std::size_t>(2 * f.size())));
}

Field get_field(engine::Reader& r) {
  const auto rows = r.get<std::int64_t>(), cols = r.get<std::int64_t>();
  auto v = r.array<double>();
  if (rows < 0 || cols < 0 || v.size() != static_cast<std::size_t>(2 * rows * cols))
    throw engine::DecodeError("field size does not match its dimensions");
  return Eigen::Map<const Field>(reinterpret_cast<const std::complex<double>*>(v.data()), rows, cols);
}

Bytes encode_job(const State& init, const SolverParams& p) {
  engine::Writer w;
  w.put<std::uint8_t>(p.algorithm == Algorithm::raar ? 0 : 1).put(p.beta);
  w.put<std::uint8_t>(p.gamma1.has_value()).put(p.gamma1.value_or(0.0));
  w.put<std::uint8_t>(p.gamma2.has_value()).put(p.gamma2.value_or(0.0));
  w.put<std::int32_t>(p.iterations).put<std::int32_t>(p.inner_iters).put(p.floor);
  put_field(w, init.probe);
  put_field(w, init.object);
  return w.take();
}

std::pair<State, SolverParams> decode_job(const Bytes& b) {
  engine::Reader r(b);
  SolverParams p;
  p.algorithm = r.get<std::uint8_t>() == 0 ? Algorithm::raar : Algorithm::dm;
  p.beta = r.get<double>();
  if (r.get<std::uint8_t>()) p.gamma1 = r.get<double>(); else r.get<double>();
  if (r.get<std::uint8_t>()) p.gamma2 = r.get<double>(); else r.get<double>();
  p.iterations = r.get<std::int32_t>();
  p.inner_iters = r.get<std::int32_t>();
  p.floor = r.get<double>();
  State s;
  s.probe = get_field(r);
  s.object = get_field(r);
  if (!r.done()) throw engine::DecodeError("trailing bytes in ptycho job");
  return {std::move(s), p};
}

}  // namespace

Bytes encode_frame(const Real& intensity, Position at) {
  engine::Writer w;
  w.put<std::int64_t>(at.row).put<std::int64_t>(at.col);
  put_real(w, intensity);
  return w.take();
}

std::pair<Real, Position> decode_frame(const Bytes& bytes) {
  engine::Reader r(bytes);
  Position at{r.get<std::int64_t>(), r.get<std::int64_t>()};
  Real a = get_real(r);
  if (!r.done()) throw engine::DecodeError("trailing bytes in frame");
  return {std::move(a), at};
}

Bytes encode_field(const Field& f) {
  engine::Writer w;
  put_field(w, f);
  return w.take();
}

Field decode_field(const Bytes& bytes) {
  engine::Reader r(bytes);
  return get_field(r);
}

Reconstruction reconstruct_distributed(engine::Context& ctx, const Scan& scan, const State& init,
                                       const SolverParams& params, int partitions) {
  std::vector<Bytes> frames;
  for (std::size_t j = 0; j < scan.intensity.size(); ++j) frames.push_back(encode_frame(scan.intensity[j], scan.positions[j]));
  auto ds = engine::Dataset::parallelize(std::move(frames), partitions)
                .map_partitions_with_index(engine::TaskSpec::collective(kReconstructTask, encode_job(init, params)));
  auto out = ctx.collect(ds);
  if (out.size() != 3) throw engine::TaskError("ptycho reconstruction returned an unexpected result");
  Reconstruction rec;
  rec.state.probe = decode_field(out[0]);
  rec.state.object = decode_field(out[1]);
  rec.epsilon = engine::decode_vec<double>(out[2]);
  return rec;
}

void register_ptycho_tasks() {
  engine::TaskRegistry::global().add_partition(kReconstructTask, [](engine::TaskContext& ctx, std::vector<Bytes> elems) {
    auto [init, params] = decode_job(ctx.config());
    std::vector<Real> intensity;
    std::vector<Position> positions;
    for (const auto& e : elems) {
      auto [a, at] = decode_frame(e);
      intensity.push_back(std::move(a));
      positions.push_back(at);
    }
    auto rec = reconstruct(intensity, positions, std::move(init), params, &ctx.communicator());
    if (ctx.partition() != 0) return std::vector<Bytes>{};
    return std::vector<Bytes>{encode_field(rec.state.probe), encode_field(rec.state.object),
                              engine::encode_vec<double>(rec.epsilon)};
  });
}

}  // namespace hflow::ptycho
