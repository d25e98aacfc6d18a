#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace hflow::collectives {
class Communicator;
}

namespace hflow::ptycho {

using Field = Eigen::ArrayXXcd;  // probe, object or exit wave
using Real = Eigen::ArrayXXd;    // detector intensity
using Stack = std::vector<Field>;

/// Object coordinates of the probe's top-left pixel.
struct Position {
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  bool operator==(const Position&) const = default;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct State {
  Field probe;
  Field object;
};

enum class Algorithm { raar, dm };

struct SolverParams {
  Algorithm algorithm = Algorithm::raar;
  double beta = 0.9;
  std::optional<double> gamma1;  // DM; default -1/beta
  std::optional<double> gamma2;  // DM; default 1/beta
  int iterations = 100;
  int inner_iters = 1;
  double floor = 1e-8;  // relative to the largest denominator
};

/// Optional communicator: null means every frame is local.
using Comm = collectives::Communicator*;

/// psi(r) = P(r - r_j) O(r) over the probe footprint.
Field exit_wave(const Field& probe, const Field& object, Position at);
Stack exit_waves(const State& s, std::span<const Position> positions);

/// |F psi|^2 with the unitary transform.
Real simulate_intensity(const Field& psi);

/// pi_1: keep the Fourier phase, impose sqrt(I) as the modulus. A zero
/// Fourier coefficient takes phase 1.
Field modulus_projection(const Field& psi, const Real& intensity);
Stack modulus_projection(const Stack& psi, std::span<const Real> intensity);

/// Probe minimising the exit-wave distance for a fixed object. With a
/// communicator, numerator and denominator are summed across ranks in one
/// allreduce.
Field update_probe(const Stack& psi, const Field& object, std::span<const Position> positions, Eigen::Index rows,
                   Eigen::Index cols, double floor, Comm comm = nullptr);
/// Object for a fixed probe; pixels no frame covers come out 0.
Field update_object(const Stack& psi, const Field& probe, std::span<const Position> positions, Eigen::Index rows,
                    Eigen::Index cols, double floor, Comm comm = nullptr);

/// pi_2: inner_iters rounds of probe then object update starting from `state`
/// (updated in place), then the exit waves of the result.
Stack overlap_projection(const Stack& psi, State& state, std::span<const Position> positions, int inner_iters,
                         double floor, Comm comm = nullptr);

/// 2b pi2(pi1 psi) + (1 - 2b) pi1 psi + b (psi - pi2 psi). Both pi2 calls
/// start from the incoming state; only the fit to pi1 psi is kept.
Stack raar_step(const Stack& psi, std::span<const Real> intensity, State& state, std::span<const Position> positions,
                const SolverParams& params, Comm comm = nullptr);
/// psi + b [pi1(f2 psi) - pi2(f1 psi)], f_i = (1 + g_i) pi_i - g_i. As in
/// raar_step, the state ends fitted to f1 psi.
Stack dm_step(const Stack& psi, std::span<const Real> intensity, State& state, std::span<const Position> positions,
              const SolverParams& params, Comm comm = nullptr);

/// Sum over frames of |psi_j - P(r - r_j) O(r)|^2, summed across ranks.
double error_metric(const Stack& psi, const State& state, std::span<const Position> positions, Comm comm = nullptr);

/// Allreduce calls one solver iteration issues (both algorithms).
inline int allreduces_per_iteration(const SolverParams& p) { return 4 * p.inner_iters + 1; }

struct Reconstruction {
  State state;
  /// epsilon[n] = error_metric(pi1(psi^n), state^n); epsilon[0] is the start.
  std::vector<double> epsilon;
};

/// Runs params.iterations steps from `init` with psi^0 = exit waves of init.
/// `intensity`/`positions` are the local frames; object dims come from init.
Reconstruction reconstruct(std::span<const Real> intensity, std::span<const Position> positions, State init,
                           const SolverParams& params, Comm comm = nullptr);

}  // namespace hflow::ptycho
