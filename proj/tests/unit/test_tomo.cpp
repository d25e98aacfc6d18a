#include <doctest.h>

#include <Eigen/QR>
#include <cmath>
#include <random>

#include "hflow/io/raster.hpp"
#include "hflow/tomo/art.hpp"
#include "tempdir.hpp"

using namespace hflow;
using namespace hflow::tomo;

namespace {

const bool registered = [] {
  register_tomo_tasks();
  return true;
}();

// Chord of the line p + t d through one square, by clipping (no traversal).
double chord(double px, double py, double dx, double dy, double x0, double x1, double y0, double y1) {
  double lo = -1e300, hi = 1e300;
  auto clip = [&](double p, double d, double a, double b) {
    if (std::abs(d) < 1e-15) {
      if (p < a || p >= b) hi = lo;
      return;
    }
    double t1 = (a - p) / d, t2 = (b - p) / d;
    lo = std::max(lo, std::min(t1, t2));
    hi = std::min(hi, std::max(t1, t2));
  };
  clip(px, dx, x0, x1);
  clip(py, dy, y0, y1);
  return hi > lo ? hi - lo : 0.0;
}

Eigen::MatrixXd dense_oracle(int n, double w, const std::vector<double>& angles, int nray, double rw) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(angles.size()) * nray, n * n);
  for (std::size_t ai = 0; ai < angles.size(); ++ai) {
    const double t = angles[ai] * M_PI / 180;
    const double dx = std::cos(t), dy = std::sin(t);
    for (int k = 0; k < nray; ++k) {
      const double off = (k - (nray - 1) / 2.0) * rw;
      for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col) {
          const double x0 = -n * w / 2 + col * w, y0 = -n * w / 2 + row * w;
          a(static_cast<Eigen::Index>(ai) * nray + k, row * n + col) =
              chord(-dy * off, dx * off, dx, dy, x0, x0 + w, y0, y0 + w) * rw;
        }
    }
  }
  return a;
}

}  // namespace

TEST_CASE("tilt angles") {
  auto a = tilt_angles(90);
  REQUIRE(a.size() == 90);
  CHECK(a.front() == -90.0);
  CHECK(a[1] == -88.0);
  CHECK(a.back() == 88.0);
  CHECK(tilt_angles(4) == std::vector<double>{-90, -45, 0, 45});
}

TEST_CASE("projector geometry") {
  const int n = 16;
  SystemMatrix a0(n, 1.0, {0.0}, n, 1.0);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(n * n);
  Eigen::VectorXd sums = a0.rows() * ones;
  CHECK((sums.array() - n).abs().maxCoeff() < 1e-12);

  // 0 deg rays run along grid rows: ray k covers row k
  for (SparseRows::InnerIterator it(a0.rows(), 3); it; ++it) CHECK(it.index() / n == 3);

  SystemMatrix both(n, 1.0, {0.0, 90.0}, n, 1.0);
  for (int k = 0; k < n; ++k) CHECK(both.row_inner_products()[k] == both.row_inner_products()[n + k]);

  std::mt19937 rng(4);
  std::uniform_real_distribution<double> ang(-90, 90);
  std::vector<double> angles;
  for (int i = 0; i < 30; ++i) angles.push_back(ang(rng));
  SystemMatrix any(n, 0.5, angles, n, 0.5);
  for (Eigen::Index j = 0; j < any.num_rows(); ++j) {
    double s = 0;
    for (SparseRows::InnerIterator it(any.rows(), j); it; ++it) {
      CHECK(it.value() >= 0);
      s += it.value();
    }
    CHECK(s <= n * 0.5 * std::sqrt(2.0) * 0.5 + 1e-12);
  }
  CHECK_THROWS_AS(SystemMatrix(0, 1.0, {0.0}, 4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(SystemMatrix(4, -1.0, {0.0}, 4, 1.0), std::invalid_argument);
}

TEST_CASE("siddon agrees with per-pixel clipping") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> ang(-90, 90);
  std::vector<double> angles{-90, -45, 0, 30, 90};
  for (int i = 0; i < 20; ++i) angles.push_back(ang(rng));
  for (int nray : {8, 11}) {
    Eigen::MatrixXd want = dense_oracle(8, 1.0, angles, nray, 0.9);
    Eigen::MatrixXd got = SystemMatrix(8, 1.0, angles, nray, 0.9).rows().toDense();
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
  // a ray that misses the grid
  CHECK(siddon(8, 1.0, 0.0, 5.0).empty());
}

TEST_CASE("row inner products") {
  std::vector<Eigen::Triplet<double>> t{{0, 2, 3.0}, {2, 1, 1.0}, {2, 3, 2.0}};
  SparseRows r(3, 4);
  r.setFromTriplets(t.begin(), t.end());
  SystemMatrix m(r);
  CHECK(m.row_inner_products()[0] == 9.0);
  CHECK(m.row_inner_products()[1] == 0.0);
  CHECK(m.row_inner_products()[2] == 5.0);

  SystemMatrix a(8, 1.0, tilt_angles(12), 8, 1.0);
  Eigen::MatrixXd d = a.rows().toDense();
  for (Eigen::Index j = 0; j < d.rows(); ++j) CHECK(a.row_inner_products()[j] == doctest::Approx(d.row(j).squaredNorm()).epsilon(1e-14));
}

TEST_CASE("kaczmarz identities") {
  SparseRows eye(6, 6);
  eye.setIdentity();
  Eigen::VectorXd b(6);
  b << 1, -2, 3.5, 0, 7, 1e-3;
  CHECK(art_slice(SystemMatrix(eye), b, {}) == b);

  std::mt19937 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    SparseRows row(1, 10);
    std::vector<Eigen::Triplet<double>> t;
    for (int c = 0; c < 10; c += 1 + trial % 3) t.emplace_back(0, c, g(rng));
    row.setFromTriplets(t.begin(), t.end());
    Eigen::VectorXd f0(10);
    for (auto& v : f0) v = g(rng);
    Eigen::VectorXd rhs(1);
    rhs << g(rng);
    auto f = art_slice(SystemMatrix(row), rhs, {}, f0);
    CHECK(std::abs((row * f)[0] - rhs[0]) < 1e-12 * (1 + std::abs(rhs[0])));
  }

  Eigen::VectorXd bad = b;
  bad[4] = std::nan("");
  try {
    art_slice(SystemMatrix(eye), bad, {.sweeps = 2});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("sweep 0 at row 4") != std::string::npos);
  }
  CHECK_THROWS_AS(art_slice(SystemMatrix(eye), b, {.beta = 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(art_slice(SystemMatrix(eye), b, {.sweeps = 0}), std::invalid_argument);
}

TEST_CASE("distance to a solution never grows") {
  std::mt19937 rng(6);
  std::normal_distribution<double> g;
  // projector on an 8x8 grid against the dense least-squares solution
  SystemMatrix a(8, 1.0, tilt_angles(6), 8, 1.0);
  Eigen::VectorXd truth(64);
  for (auto& v : truth) v = std::abs(g(rng));
  Eigen::VectorXd b = a.rows() * truth;
  Eigen::MatrixXd dense = a.rows().toDense();
  Eigen::VectorXd star = dense.completeOrthogonalDecomposition().solve(b);
  REQUIRE((dense * star - b).norm() < 1e-9 * b.norm());
  for (double beta : {0.5, 1.0, 1.5}) {
    double prev = star.norm();
    art_slice(a, b, {.beta = beta, .sweeps = 20}, {}, [&](int, const Eigen::VectorXd& f) {
      double d = (f - star).norm();
      CHECK(d <= prev * (1 + 1e-12));
      prev = d;
    });
  }

  // random dense consistent 16x16 systems
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd m(16, 16);
    for (auto& v : m.reshaped()) v = g(rng);
    Eigen::VectorXd x(16);
    for (auto& v : x) v = g(rng);
    SystemMatrix s(m.sparseView());
    Eigen::VectorXd rhs = m * x;
    double prev = x.norm();
    art_slice(s, rhs, {.beta = 0.5 + 0.1 * trial, .sweeps = 15}, {}, [&](int, const Eigen::VectorXd& f) {
      double d = (f - x).norm();
      CHECK(d <= prev * (1 + 1e-12));
      prev = d;
    });
  }
}

TEST_CASE("sparse and dense ART agree") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto order : {RowOrder::sequential, RowOrder::shuffled}) {
    SystemMatrix a(8, 1.0, tilt_angles(10), 8, 1.0);
    Eigen::VectorXd b(a.num_rows());
    for (auto& v : b) v = u(rng);
    ArtParams p{.beta = 1.3, .sweeps = 4, .order = order, .seed = 77, .nonneg = order == RowOrder::shuffled};
    auto s = art_slice(a, b, p);
    auto d = art_dense(a.rows().toDense(), b, p);
    CHECK((s - d).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("projections and volumes") {
  Geometry geom{16, 1.0, 1.0, tilt_angles(8)};
  SystemMatrix a = geom.matrix();
  Volume zero{2, 16, std::vector<double>(2 * 256, 0.0)};
  auto zs = simulate_projections(zero, geom);
  CHECK(std::all_of(zs.data.begin(), zs.data.end(), [](double v) { return v == 0.0; }));

  auto ph = make_phantom(3, 16);
  auto series = simulate_projections(ph, geom);
  CHECK(series.nproj() == 8);
  for (int s = 0; s < 3; ++s) CHECK(series.rhs(s) == a.rows() * ph.slice(s));

  Volume ones{1, 16, std::vector<double>(256, 1.0)};
  Geometry flat{16, 1.0, 1.0, {0.0}};
  auto col = simulate_projections(ones, flat);
  for (int k = 0; k < 16; ++k) CHECK(col.data[k] == doctest::Approx(16.0).epsilon(1e-14));

  // data layout: (s, k, p) at (s*nray + k)*nproj + p
  CHECK(series.data[(2 * 16 + 5) * 8 + 3] == series.rhs(2)[3 * 16 + 5]);
}

TEST_CASE("volume reconstruction is partition invariant") {
  Geometry geom{32, 1.0, 1.0, tilt_angles(45)};
  auto ph = make_phantom(8, 32);
  auto series = simulate_projections(ph, geom);
  ArtParams p{.sweeps = 3};
  auto local = reconstruct_volume(series, geom, p);

  engine::Context ctx({.workers = 4});
  TiltSeries one{1, 32, series.angles, {}};
  one.data.assign(series.data.begin(), series.data.begin() + 32 * 45);
  Eigen::VectorXd direct = art_slice(geom.matrix(), series.rhs(0), p);
  CHECK(reconstruct_volume(ctx, one, geom, p, 1).slice(0) == direct);

  for (int parts : {1, 2, 4, 8}) CHECK(reconstruct_volume(ctx, series, geom, p, parts).data == local.data);
  CHECK_THROWS_AS(reconstruct_volume(ctx, series, geom, p, 9), std::invalid_argument);
}

TEST_CASE("desk-scale phantom reconstructs") {
  Geometry geom{64, 1.0, 1.0, tilt_angles(90)};
  auto ph = make_phantom(2, 64);
  auto vol = reconstruct_volume(simulate_projections(ph, geom), geom, {.sweeps = 10});
  for (int s = 0; s < 2; ++s) CHECK(relative_error(vol.slice(s), ph.slice(s)) <= 0.15);
}

TEST_CASE("volume and series files") {
  TempDir tmp;
  Geometry geom{8, 1.0, 1.0, tilt_angles(4)};
  auto ph = make_phantom(2, 8);
  auto series = simulate_projections(ph, geom);
  write_volume(tmp.path, ph);
  write_series(tmp.path, series);
  write_slice_pgms(tmp.path, ph);
  auto v = read_volume(tmp.path);
  CHECK(v.nslice == 2);
  CHECK(v.n == 8);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(v.data[i] == static_cast<double>(static_cast<float>(ph.data[i])));
  auto t = read_series(tmp.path);
  CHECK(t.angles == series.angles);
  CHECK(t.nproj() == 4);
  CHECK(io::read_json(tmp.path / "volume.json")["dims"] == nlohmann::json({2, 8, 8}));
  CHECK(io::read_file(tmp.path / "volume.f32").size() == 2 * 64 * 4);
  int w = 0, h = 0;
  auto px = io::read_pgm(tmp.path / "slice_001.pgm", w, h);
  CHECK(w == 8);
  CHECK(h == 8);
  CHECK(std::filesystem::exists(tmp.path / "slice_000.pgm"));
}
