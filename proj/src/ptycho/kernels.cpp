#include "hflow/ptycho/kernels.hpp"

#include <cmath>

#include "hflow/collectives/communicator.hpp"
#include "hflow/collectives/exact_sum.hpp"
#include "hflow/ptycho/fft.hpp"

namespace hflow::ptycho {
namespace {

void check_footprint(Eigen::Index prows, Eigen::Index pcols, Eigen::Index orows, Eigen::Index ocols, Position at) {
  if (at.row < 0 || at.col < 0 || at.row + prows > orows || at.col + pcols > ocols)
    throw std::invalid_argument("probe footprint at (" + std::to_string(at.row) + "," + std::to_string(at.col) +
                                ") leaves the object");
}

void check_frames(const Stack& psi, std::span<const Position> positions) {
  if (psi.size() != positions.size()) throw std::invalid_argument("one position per exit wave required");
}

Field floored_quotient(const Field& num, const Real& den, double floor) {
  const double top = den.size() ? den.maxCoeff() : 0.0;
  if (top <= 0.0) return Field::Zero(num.rows(), num.cols());
  return num / den.max(floor * top).cast<std::complex<double>>();
}

// Numerator (complex) and denominator grids accumulated exactly, so the
// result does not depend on how frames are split across ranks. The iteration
// amplifies rounding differences, and plain partial sums let 1- and 4-rank
// runs drift apart by percent-level amounts within 100 iterations.
class Accumulator {
 public:
  Accumulator(Eigen::Index rows, Eigen::Index cols)
      : rows_(rows), cols_(cols), n_(static_cast<std::size_t>(rows * cols)), sum_(3 * n_) {}

  // Adds psi * conj(w) to the numerator and |w|^2 to the denominator over the
  // block whose top-left corner is (r0, c0).
  template <typename Psi, typename W>
  void add(const Psi& psi, const W& w, Eigen::Index r0, Eigen::Index c0) {
    for (Eigen::Index c = 0; c < psi.cols(); ++c)
      for (Eigen::Index r = 0; r < psi.rows(); ++r) {
        const std::size_t i = static_cast<std::size_t>((c0 + c) * rows_ + r0 + r);
        const std::complex<double> v = psi(r, c) * std::conj(w(r, c));
        sum_.add(i, v.real());
        sum_.add(n_ + i, v.imag());
        sum_.add(2 * n_ + i, std::norm(w(r, c)));
      }
  }

  // One allreduce, then the floored quotient.
  Field quotient(Comm comm, double floor) {
    sum_.allreduce(comm);
    Field num(rows_, cols_);
    Real den(rows_, cols_);
    for (std::size_t i = 0; i < n_; ++i) {
      num(static_cast<Eigen::Index>(i)) = {sum_.value(i), sum_.value(n_ + i)};
      den(static_cast<Eigen::Index>(i)) = sum_.value(2 * n_ + i);
    }
    // keep a poisoned sum visible; max() and maxCoeff() may drop NaN
    if (!num.allFinite() || !den.allFinite()) return Field::Constant(rows_, cols_, std::nan(""));
    return floored_quotient(num, den, floor);
  }

 private:
  Eigen::Index rows_, cols_;
  std::size_t n_;
  collectives::ExactSum sum_;
};

Stack combine(const Stack& a, double ca, const Stack& b, double cb) {
  Stack out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = ca * a[j] + cb * b[j];
  return out;
}

}  // namespace

Field exit_wave(const Field& probe, const Field& object, Position at) {
  check_footprint(probe.rows(), probe.cols(), object.rows(), object.cols(), at);
  return probe * object.block(at.row, at.col, probe.rows(), probe.cols());
}

Stack exit_waves(const State& s, std::span<const Position> positions) {
  Stack out;
  out.reserve(positions.size());
  for (const auto& r : positions) out.push_back(exit_wave(s.probe, s.object, r));
  return out;
}

Real simulate_intensity(const Field& psi) {
  if (!psi.allFinite()) throw std::invalid_argument("exit wave has non-finite values");
  return fft2(psi).abs2();
}

Field modulus_projection(const Field& psi, const Real& intensity) {
  if (psi.rows() != intensity.rows() || psi.cols() != intensity.cols())
    throw std::invalid_argument("exit wave and intensity shapes differ");
  Field f = fft2(psi);
  const Real amp = intensity.sqrt();
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double m = std::abs(f(i));
    f(i) = m > 0.0 ? f(i) * (amp(i) / m) : std::complex<double>(amp(i), 0.0);
  }
  return ifft2(f);
}

Stack modulus_projection(const Stack& psi, std::span<const Real> intensity) {
  if (psi.size() != intensity.size()) throw std::invalid_argument("one intensity per exit wave required");
  Stack out(psi.size());
  for (std::size_t j = 0; j < psi.size(); ++j) out[j] = modulus_projection(psi[j], intensity[j]);
  return out;
}

Field update_probe(const Stack& psi, const Field& object, std::span<const Position> positions, Eigen::Index rows,
                   Eigen::Index cols, double floor, Comm comm) {
  check_frames(psi, positions);
  Accumulator acc(rows, cols);
  for (std::size_t j = 0; j < psi.size(); ++j) {
    check_footprint(rows, cols, object.rows(), object.cols(), positions[j]);
    acc.add(psi[j], object.block(positions[j].row, positions[j].col, rows, cols), 0, 0);
  }
  return acc.quotient(comm, floor);
}

Field update_object(const Stack& psi, const Field& probe, std::span<const Position> positions, Eigen::Index rows,
                    Eigen::Index cols, double floor, Comm comm) {
  check_frames(psi, positions);
  Accumulator acc(rows, cols);
  for (std::size_t j = 0; j < psi.size(); ++j) {
    const auto& r = positions[j];
    check_footprint(probe.rows(), probe.cols(), rows, cols, r);
    acc.add(psi[j], probe, r.row, r.col);
  }
  return acc.quotient(comm, floor);
}

Stack overlap_projection(const Stack& psi, State& state, std::span<const Position> positions, int inner_iters,
                         double floor, Comm comm) {
  if (inner_iters < 1) throw std::invalid_argument("inner_iters must be at least 1");
  for (int k = 0; k < inner_iters; ++k) {
    state.probe = update_probe(psi, state.object, positions, state.probe.rows(), state.probe.cols(), floor, comm);
    state.object = update_object(psi, state.probe, positions, state.object.rows(), state.object.cols(), floor, comm);
  }
  return exit_waves(state, positions);
}

Stack raar_step(const Stack& psi, std::span<const Real> intensity, State& state, std::span<const Position> positions,
                const SolverParams& params, Comm comm) {
  const double b = params.beta;
  if (!(b > 0.0 && b <= 1.0)) throw std::invalid_argument("beta must lie in (0, 1]");
  State scratch = state;
  Stack p2 = overlap_projection(psi, scratch, positions, params.inner_iters, params.floor, comm);
  Stack p1 = modulus_projection(psi, intensity);
  Stack p21 = overlap_projection(p1, state, positions, params.inner_iters, params.floor, comm);
  Stack out(psi.size());
  for (std::size_t j = 0; j < psi.size(); ++j)
    out[j] = 2.0 * b * p21[j] + (1.0 - 2.0 * b) * p1[j] + b * (psi[j] - p2[j]);
  return out;
}

Stack dm_step(const Stack& psi, std::span<const Real> intensity, State& state, std::span<const Position> positions,
              const SolverParams& params, Comm comm) {
  const double b = params.beta;
  if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  if (b == 0.0) return psi;
  const double g1 = params.gamma1.value_or(-1.0 / b);
  const double g2 = params.gamma2.value_or(1.0 / b);
  State scratch = state;
  Stack p2 = overlap_projection(psi, scratch, positions, params.inner_iters, params.floor, comm);
  Stack p1 = modulus_projection(psi, intensity);
  Stack f1 = combine(p1, 1.0 + g1, psi, -g1);
  Stack f2 = combine(p2, 1.0 + g2, psi, -g2);
  Stack a = modulus_projection(f2, intensity);
  Stack c = overlap_projection(f1, state, positions, params.inner_iters, params.floor, comm);
  Stack out(psi.size());
  for (std::size_t j = 0; j < psi.size(); ++j) out[j] = psi[j] + b * (a[j] - c[j]);
  return out;
}

double error_metric(const Stack& psi, const State& state, std::span<const Position> positions, Comm comm) {
  check_frames(psi, positions);
  double e = 0.0;
  for (std::size_t j = 0; j < psi.size(); ++j) e += (psi[j] - exit_wave(state.probe, state.object, positions[j])).abs2().sum();
  if (comm != nullptr) {
    double v[1] = {e};
    comm->allreduce(std::span<double>(v), collectives::ReduceOp::sum);
    e = v[0];
  }
  return e;
}

Reconstruction reconstruct(std::span<const Real> intensity, std::span<const Position> positions, State init,
                           const SolverParams& params, Comm comm) {
  if (params.iterations < 0) throw std::invalid_argument("iterations must not be negative");
  if (intensity.size() != positions.size()) throw std::invalid_argument("one position per frame required");
  Reconstruction rec{std::move(init), {}};
  Stack psi = exit_waves(rec.state, positions);
  auto measure = [&] {
    double e = error_metric(modulus_projection(psi, intensity), rec.state, positions, comm);
    if (!std::isfinite(e))
      throw DivergenceError("reconstruction diverged at iteration " + std::to_string(rec.epsilon.size()));
    rec.epsilon.push_back(e);
  };
  measure();
  for (int n = 0; n < params.iterations; ++n) {
    psi = params.algorithm == Algorithm::raar ? raar_step(psi, intensity, rec.state, positions, params, comm)
                                              : dm_step(psi, intensity, rec.state, positions, params, comm);
    measure();
  }
  return rec;
}

}  // namespace hflow::ptycho
