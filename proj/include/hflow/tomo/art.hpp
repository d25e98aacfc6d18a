#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "hflow/engine/context.hpp"

namespace hflow::tomo {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Parallel-beam projector over an n x n grid centred at the origin. Pixel
/// (row, col) is column row*n + col, with col along +x and row along +y.
/// Rows are angle-major: row = angle_index * nray + ray. At angle t the rays
/// run along (cos t, sin t) and ray k sits at offset (k - (nray-1)/2) * ray_width
/// along (-sin t, cos t). Entries are chord lengths times ray_width.
class SystemMatrix {
 public:
  SystemMatrix(int nside, double pixel_width, std::vector<double> angles_deg, int nray, double ray_width);
  /// Wraps arbitrary rows (tests, dense comparisons).
  explicit SystemMatrix(SparseRows rows);

  const SparseRows& rows() const { return a_; }
  /// Sum of squared weights per row, computed once.
  const Eigen::VectorXd& row_inner_products() const { return rip_; }
  Eigen::Index num_rows() const { return a_.rows(); }
  Eigen::Index num_cols() const { return a_.cols(); }

 private:
  SparseRows a_;
  Eigen::VectorXd rip_;
};

/// Chord lengths of one line through the grid (Siddon traversal), as
/// (column, length) pairs in traversal order.
std::vector<std::pair<Eigen::Index, double>> siddon(int nside, double pixel_width, double angle_deg, double offset);

/// `count` angles from -90 degrees in steps of 180/count.
std::vector<double> tilt_angles(int count);

enum class RowOrder { sequential, shuffled };

struct ArtParams {
  double beta = 1.0;  // (0, 2)
  int sweeps = 1;
  RowOrder order = RowOrder::sequential;
  std::uint64_t seed = 0;  // shuffled order only
  bool nonneg = false;     // clamp after each sweep
};

/// Kaczmarz sweeps: f += beta * (b_j - <a_j, f>) / |a_j|^2 * a_j. Zero rows
/// are skipped. `observer` (if set) sees f after every sweep.
Eigen::VectorXd art_slice(const SystemMatrix& a, const Eigen::VectorXd& b, const ArtParams& params,
                          Eigen::VectorXd f0 = {},
                          const std::function<void(int, const Eigen::VectorXd&)>& observer = {});

/// Same iteration on a dense matrix; reference for the sparse path.
Eigen::VectorXd art_dense(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const ArtParams& params,
                          Eigen::VectorXd f0 = {});

/// Nslice x Nray x Nproj projections, entry (s, k, p) at (s*nray + k)*nproj + p.
struct TiltSeries {
  int nslice = 0, nray = 0;
  std::vector<double> angles;  // degrees, increasing
  std::vector<double> data;

  int nproj() const { return static_cast<int>(angles.size()); }
  /// Sinogram of slice s transposed and flattened: angle-major, matching the rows of A.
  Eigen::VectorXd rhs(int s) const;
  void set_rhs(int s, const Eigen::VectorXd& b);
};

/// Nslice x n x n, entry (s, row, col) at (s*n + row)*n + col.
struct Volume {
  int nslice = 0, n = 0;
  std::vector<double> data;

  Eigen::VectorXd slice(int s) const;
  void set_slice(int s, const Eigen::VectorXd& f);
};

struct Geometry {
  int nray = 64;
  double pixel_width = 1.0;
  double ray_width = 1.0;
  std::vector<double> angles;
  SystemMatrix matrix() const { return SystemMatrix(nray, pixel_width, angles, nray, ray_width); }
};

/// Ellipses of constant density; each slice shifts them slightly.
Volume make_phantom(int nslice, int n);
TiltSeries simulate_projections(const Volume& phantom, const Geometry& geom);

/// Every slice in order, in this process.
Volume reconstruct_volume(const TiltSeries& series, const Geometry& geom, const ArtParams& params);
/// Contiguous slice blocks as plain engine tasks; bit-identical to the local path.
Volume reconstruct_volume(engine::Context& ctx, const TiltSeries& series, const Geometry& geom, const ArtParams& params,
                          int partitions);

inline constexpr const char* kArtTask = "tomo.art_slice";
void register_tomo_tasks();

/// volume.f32 + volume.json with dims [Nslice, Nray, Nray].
void write_volume(const std::filesystem::path& dir, const Volume& v);
Volume read_volume(const std::filesystem::path& dir);
/// series.f32 + series.json with dims [Nslice, Nray, Nproj] and angles.
void write_series(const std::filesystem::path& dir, const TiltSeries& t);
TiltSeries read_series(const std::filesystem::path& dir);
/// One PGM per slice, grey levels spanning the volume's min..max.
void write_slice_pgms(const std::filesystem::path& dir, const Volume& v);

double relative_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

}  // namespace hflow::tomo
