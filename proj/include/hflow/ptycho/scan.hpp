#pragma once

#include <cstdint>
#include <filesystem>

#include "hflow/ptycho/kernels.hpp"

namespace hflow::ptycho {

/// Frames plus, for synthetic scans, the ground truth they came from.
struct Scan {
  std::vector<Real> intensity;
  std::vector<Position> positions;
  Eigen::Index object_rows = 0;
  Eigen::Index object_cols = 0;
  Field probe;   // truth; empty when unknown
  Field object;  // truth; empty when unknown
  std::uint64_t seed = 0;
};

struct SimParams {
  Eigen::Index object_size = 128;
  Eigen::Index probe_size = 32;
  int grid = 8;  // grid x grid scan positions
  std::uint64_t seed = 1;
};

/// round(k (object - probe) / (grid - 1)) along each axis, row-major order.
std::vector<Position> grid_positions(Eigen::Index object_size, Eigen::Index probe_size, int grid);

/// Gaussian amplitude (sigma = n/5) with a quadratic phase.
Field make_probe(Eigen::Index n);
/// Smooth random amplitude in [0.7, 1] and phase within (-pi/2, pi/2).
Field make_object(Eigen::Index n, std::uint64_t seed);
Scan simulate_scan(const SimParams& params);

/// Known probe blurred by a 3x3 box (edge pixels average what exists), or
/// a centred disk of half the probe width when the probe is unknown; object 1.
State initial_state(const Scan& scan, Eigen::Index probe_size);

/// Sum of |P|^2 over all footprints, in object coordinates.
Real illumination(const Field& probe, std::span<const Position> positions, Eigen::Index rows, Eigen::Index cols);
/// Pixels whose illumination reaches `fraction` of the maximum.
Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> well_covered(const Real& illum, double fraction = 0.1);

/// |sum a conj(b)| / (|a| |b|) over the mask; insensitive to global phase and scale.
double complex_correlation(const Field& a, const Field& b, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);
/// `a` times the global phase factor that best aligns it with `b` on the mask.
Field align_phase(const Field& a, const Field& b, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);

/// Writes scan.json, frames.f32 and, when present, probe.c64 / object.c64.
void write_scan(const std::filesystem::path& dir, const Scan& scan);
Scan read_scan(const std::filesystem::path& dir);

void write_phase_pgm(const std::filesystem::path& path, const Field& field);
void write_epsilon_csv(const std::filesystem::path& path, const std::vector<double>& epsilon);
void write_complex(const std::filesystem::path& path, const Field& field);
Field read_complex(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

}  // namespace hflow::ptycho
