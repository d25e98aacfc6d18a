#include "hflow/tomo/art.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "hflow/io/raster.hpp"
#include "hflow/rng.hpp"

namespace hflow::tomo {
namespace {

// cos/sin with exact zeros on the axes, so axis-aligned rays stay on the grid.
std::pair<double, double> direction(double angle_deg) {
  double m = std::fmod(angle_deg, 360.0);
  if (m < 0) m += 360.0;
  if (m == 0.0) return {1.0, 0.0};
  if (m == 90.0) return {0.0, 1.0};
  if (m == 180.0) return {-1.0, 0.0};
  if (m == 270.0) return {0.0, -1.0};
  const double t = angle_deg * std::numbers::pi / 180.0;
  return {std::cos(t), std::sin(t)};
}

void check_params(const ArtParams& p) {
  if (!(p.beta > 0.0 && p.beta < 2.0)) throw std::invalid_argument("ART beta must lie in (0, 2)");
  if (p.sweeps < 1) throw std::invalid_argument("ART needs at least one sweep");
}

std::vector<Eigen::Index> row_order(Eigen::Index m, const ArtParams& p, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) order[static_cast<std::size_t>(j)] = j;
  if (p.order == RowOrder::shuffled)
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

std::vector<std::pair<Eigen::Index, double>> siddon(int nside, double pixel_width, double angle_deg, double offset) {
  const double half = nside * pixel_width / 2;
  const auto [c, s] = direction(angle_deg);
  const double px = -s * offset, py = c * offset;  // point on the ray closest to the origin

  double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
  auto clip = [&](double p, double d) {
    if (d == 0.0) {
      if (p < -half || p >= half) tmax = tmin;  // parallel and outside
      return;
    }
    double t1 = (-half - p) / d, t2 = (half - p) / d;
    tmin = std::max(tmin, std::min(t1, t2));
    tmax = std::min(tmax, std::max(t1, t2));
  };
  clip(px, c);
  clip(py, s);
  std::vector<std::pair<Eigen::Index, double>> out;
  if (!(tmax > tmin)) return out;

  std::vector<double> ts{tmin, tmax};
  for (int i = 0; i <= nside; ++i) {
    const double plane = -half + i * pixel_width;
    if (c != 0.0) {
      double t = (plane - px) / c;
      if (t > tmin && t < tmax) ts.push_back(t);
    }
    if (s != 0.0) {
      double t = (plane - py) / s;
      if (t > tmin && t < tmax) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double len = ts[i + 1] - ts[i];
    if (len <= 1e-12 * pixel_width) continue;
    const double mid = (ts[i] + ts[i + 1]) / 2;
    auto cell = [&](double v) {
      return std::clamp(static_cast<Eigen::Index>(std::floor((v + half) / pixel_width)), Eigen::Index{0},
                        Eigen::Index{nside - 1});
    };
    out.emplace_back(cell(py + mid * s) * nside + cell(px + mid * c), len);
  }
  return out;
}

std::vector<double> tilt_angles(int count) {
  if (count < 1) throw std::invalid_argument("need at least one angle");
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(-90.0 + k * 180.0 / count);
  return out;
}

SystemMatrix::SystemMatrix(int nside, double pixel_width, std::vector<double> angles_deg, int nray, double ray_width) {
  if (nside < 1 || nray < 1 || !(pixel_width > 0) || !(ray_width > 0) || angles_deg.empty())
    throw std::invalid_argument("projector dimensions and widths must be positive");
  std::vector<Eigen::Triplet<double>> entries;
  const auto nproj = static_cast<Eigen::Index>(angles_deg.size());
  for (Eigen::Index a = 0; a < nproj; ++a)
    for (int k = 0; k < nray; ++k) {
      const double offset = (k - (nray - 1) / 2.0) * ray_width;
      for (const auto& [col, len] : siddon(nside, pixel_width, angles_deg[static_cast<std::size_t>(a)], offset))
        entries.emplace_back(a * nray + k, col, len * ray_width);
    }
  a_.resize(nproj * nray, static_cast<Eigen::Index>(nside) * nside);
  a_.setFromTriplets(entries.begin(), entries.end());
  a_.makeCompressed();
  rip_ = Eigen::VectorXd::Zero(a_.rows());
  for (Eigen::Index j = 0; j < a_.outerSize(); ++j)
    for (SparseRows::InnerIterator it(a_, j); it; ++it) rip_[j] += it.value() * it.value();
}

SystemMatrix::SystemMatrix(SparseRows rows) : a_(std::move(rows)) {
  a_.makeCompressed();
  rip_ = Eigen::VectorXd::Zero(a_.rows());
  for (Eigen::Index j = 0; j < a_.outerSize(); ++j)
    for (SparseRows::InnerIterator it(a_, j); it; ++it) rip_[j] += it.value() * it.value();
}

Eigen::VectorXd art_slice(const SystemMatrix& a, const Eigen::VectorXd& b, const ArtParams& params,
                          Eigen::VectorXd f0, const std::function<void(int, const Eigen::VectorXd&)>& observer) {
  check_params(params);
  const auto& rows = a.rows();
  const auto& rip = a.row_inner_products();
  if (b.size() != rows.rows()) throw std::invalid_argument("right-hand side length does not match the matrix");
  Eigen::VectorXd f = f0.size() ? std::move(f0) : Eigen::VectorXd::Zero(rows.cols());
  if (f.size() != rows.cols()) throw std::invalid_argument("initial estimate length does not match the matrix");
  Rng rng(params.seed);
  for (int sweep = 0; sweep < params.sweeps; ++sweep) {
    for (Eigen::Index j : row_order(rows.rows(), params, rng)) {
      if (rip[j] == 0.0) continue;
      double dot = 0.0;
      for (SparseRows::InnerIterator it(rows, j); it; ++it) dot += it.value() * f[it.index()];
      const double alpha = (b[j] - dot) / rip[j];
      if (!std::isfinite(alpha))
        throw DivergenceError("ART diverged in sweep " + std::to_string(sweep) + " at row " + std::to_string(j));
      for (SparseRows::InnerIterator it(rows, j); it; ++it) f[it.index()] += it.value() * alpha * params.beta;
    }
    if (params.nonneg) f = f.cwiseMax(0.0);
    if (observer) observer(sweep, f);
  }
  return f;
}

Eigen::VectorXd art_dense(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const ArtParams& params,
                          Eigen::VectorXd f0) {
  check_params(params);
  Eigen::VectorXd f = f0.size() ? std::move(f0) : Eigen::VectorXd::Zero(a.cols());
  Rng rng(params.seed);
  for (int sweep = 0; sweep < params.sweeps; ++sweep) {
    for (Eigen::Index j : row_order(a.rows(), params, rng)) {
      const double norm = a.row(j).squaredNorm();
      if (norm == 0.0) continue;
      const double alpha = (b[j] - a.row(j).dot(f)) / norm;
      if (!std::isfinite(alpha))
        throw DivergenceError("ART diverged in sweep " + std::to_string(sweep) + " at row " + std::to_string(j));
      f += a.row(j).transpose() * alpha * params.beta;
    }
    if (params.nonneg) f = f.cwiseMax(0.0);
  }
  return f;
}

Eigen::VectorXd TiltSeries::rhs(int s) const {
  const int np = nproj();
  Eigen::VectorXd b(static_cast<Eigen::Index>(np) * nray);
  for (int p = 0; p < np; ++p)
    for (int k = 0; k < nray; ++k) b[p * nray + k] = data[(static_cast<std::size_t>(s) * nray + k) * np + p];
  return b;
}

void TiltSeries::set_rhs(int s, const Eigen::VectorXd& b) {
  const int np = nproj();
  for (int p = 0; p < np; ++p)
    for (int k = 0; k < nray; ++k) data[(static_cast<std::size_t>(s) * nray + k) * np + p] = b[p * nray + k];
}

Eigen::VectorXd Volume::slice(int s) const {
  const auto len = static_cast<std::size_t>(n) * n;
  return Eigen::Map<const Eigen::VectorXd>(data.data() + s * len, static_cast<Eigen::Index>(len));
}

void Volume::set_slice(int s, const Eigen::VectorXd& f) {
  const auto len = static_cast<std::size_t>(n) * n;
  std::copy(f.data(), f.data() + len, data.begin() + static_cast<std::ptrdiff_t>(s * len));
}

Volume make_phantom(int nslice, int n) {
  struct Ellipse {
    double x, y, a, b, deg, value;
  };
  // Shepp-Logan layout with non-negative totals.
  const Ellipse base[] = {{0, 0, 0.69, 0.92, 0, 1.0},         {0, -0.0184, 0.6624, 0.874, 0, -0.6},
                          {0.22, 0, 0.11, 0.31, -18, -0.3},   {-0.22, 0, 0.16, 0.41, 18, -0.3},
                          {0, 0.35, 0.21, 0.25, 0, 0.3},      {0, 0.1, 0.046, 0.046, 0, 0.4},
                          {0, -0.1, 0.046, 0.046, 0, 0.4},    {-0.08, -0.605, 0.046, 0.023, 0, 0.3},
                          {0, -0.605, 0.023, 0.023, 0, 0.3},  {0.06, -0.605, 0.023, 0.046, 0, 0.3}};
  Volume v{nslice, n, std::vector<double>(static_cast<std::size_t>(nslice) * n * n, 0.0)};
  for (int s = 0; s < nslice; ++s) {
    const double shift = 0.02 * (s - (nslice - 1) / 2.0);
    for (int row = 0; row < n; ++row)
      for (int col = 0; col < n; ++col) {
        const double x = (col + 0.5) / n * 2 - 1, y = (row + 0.5) / n * 2 - 1;
        double total = 0;
        for (const auto& e : base) {
          const double t = e.deg * std::numbers::pi / 180;
          const double dx = x - e.x, dy = y - (e.y + shift);
          const double u = dx * std::cos(t) + dy * std::sin(t), w = -dx * std::sin(t) + dy * std::cos(t);
          if ((u * u) / (e.a * e.a) + (w * w) / (e.b * e.b) <= 1.0) total += e.value;
        }
        v.data[(static_cast<std::size_t>(s) * n + row) * n + col] = total;
      }
  }
  return v;
}

TiltSeries simulate_projections(const Volume& phantom, const Geometry& geom) {
  if (phantom.n != geom.nray) throw std::invalid_argument("phantom size must equal the ray count");
  SystemMatrix a = geom.matrix();
  TiltSeries t{phantom.nslice, geom.nray, geom.angles, {}};
  t.data.assign(static_cast<std::size_t>(t.nslice) * t.nray * t.nproj(), 0.0);
  for (int s = 0; s < phantom.nslice; ++s) t.set_rhs(s, a.rows() * phantom.slice(s));
  return t;
}

Volume reconstruct_volume(const TiltSeries& series, const Geometry& geom, const ArtParams& params) {
  SystemMatrix a = geom.matrix();
  Volume v{series.nslice, geom.nray, std::vector<double>(static_cast<std::size_t>(series.nslice) * geom.nray * geom.nray)};
  for (int s = 0; s < series.nslice; ++s) v.set_slice(s, art_slice(a, series.rhs(s), params));
  return v;
}

namespace {

engine::Bytes encode_config(const Geometry& g, const ArtParams& p) {
  engine::Writer w;
  w.put<std::int32_t>(g.nray).put(g.pixel_width).put(g.ray_width);
  w.array(std::span<const double>(g.angles));
  w.put(p.beta).put<std::int32_t>(p.sweeps).put<std::uint8_t>(p.order == RowOrder::shuffled).put(p.seed);
  w.put<std::uint8_t>(p.nonneg);
  return w.take();
}

std::pair<Geometry, ArtParams> decode_config(const engine::Bytes& b) {
  engine::Reader r(b);
  Geometry g;
  g.nray = r.get<std::int32_t>();
  g.pixel_width = r.get<double>();
  g.ray_width = r.get<double>();
  g.angles = r.array<double>();
  ArtParams p;
  p.beta = r.get<double>();
  p.sweeps = r.get<std::int32_t>();
  p.order = r.get<std::uint8_t>() ? RowOrder::shuffled : RowOrder::sequential;
  p.seed = r.get<std::uint64_t>();
  p.nonneg = r.get<std::uint8_t>() != 0;
  if (!r.done()) throw engine::DecodeError("trailing bytes in ART config");
  return {std::move(g), p};
}

engine::Bytes encode_slice(std::int32_t s, const Eigen::VectorXd& v) {
  engine::Writer w;
  w.put(s).array(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  return w.take();
}

std::pair<std::int32_t, Eigen::VectorXd> decode_slice(const engine::Bytes& b) {
  engine::Reader r(b);
  auto s = r.get<std::int32_t>();
  auto v = r.array<double>();
  if (!r.done()) throw engine::DecodeError("trailing bytes in slice");
  return {s, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))};
}

// Workers keep the matrix of the last geometry they saw.
const SystemMatrix& cached_matrix(const engine::Bytes& config, const Geometry& g) {
  static std::mutex mu;
  static std::map<engine::Bytes, std::unique_ptr<SystemMatrix>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(config);
  if (it == cache.end()) {
    cache.clear();
    it = cache.emplace(config, std::make_unique<SystemMatrix>(g.matrix())).first;
  }
  return *it->second;
}

}  // namespace

Volume reconstruct_volume(engine::Context& ctx, const TiltSeries& series, const Geometry& geom, const ArtParams& params,
                          int partitions) {
  if (partitions < 1 || partitions > series.nslice) throw std::invalid_argument("partitions must lie in 1..Nslice");
  std::vector<engine::Bytes> slices;
  for (int s = 0; s < series.nslice; ++s) slices.push_back(encode_slice(s, series.rhs(s)));
  auto ds = engine::Dataset::parallelize(std::move(slices), partitions)
                .map(engine::TaskSpec::plain(kArtTask, encode_config(geom, params)));
  auto out = ctx.collect(ds);
  Volume v{series.nslice, geom.nray, std::vector<double>(static_cast<std::size_t>(series.nslice) * geom.nray * geom.nray)};
  if (out.size() != static_cast<std::size_t>(series.nslice)) throw engine::TaskError("ART job lost slices");
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [s, f] = decode_slice(out[i]);
    if (s != static_cast<std::int32_t>(i)) throw engine::TaskError("ART results out of slice order");
    v.set_slice(s, f);
  }
  return v;
}

void register_tomo_tasks() {
  engine::TaskRegistry::global().add_map(kArtTask, [](const engine::Bytes& elem, const engine::Bytes& config) {
    auto [geom, params] = decode_config(config);
    auto [s, b] = decode_slice(elem);
    return encode_slice(s, art_slice(cached_matrix(config, geom), b, params));
  });
}

namespace {

std::vector<float> to_f32(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

void write_volume(const std::filesystem::path& dir, const Volume& v) {
  io::write_raw(dir / "volume.f32", to_f32(v.data));
  io::write_json(dir / "volume.json", {{"dims", {v.nslice, v.n, v.n}}, {"dtype", "float32"}});
}

Volume read_volume(const std::filesystem::path& dir) {
  auto j = io::read_json(dir / "volume.json");
  Volume v;
  v.nslice = j.at("dims").at(0).get<int>();
  v.n = j.at("dims").at(1).get<int>();
  auto raw = io::read_raw<float>(dir / "volume.f32");
  if (raw.size() != static_cast<std::size_t>(v.nslice) * v.n * v.n) throw io::IoError("volume.f32 has the wrong size");
  v.data.assign(raw.begin(), raw.end());
  return v;
}

void write_series(const std::filesystem::path& dir, const TiltSeries& t) {
  io::write_raw(dir / "series.f32", to_f32(t.data));
  io::write_json(dir / "series.json",
                 {{"dims", {t.nslice, t.nray, t.nproj()}}, {"dtype", "float32"}, {"angles", t.angles}});
}

TiltSeries read_series(const std::filesystem::path& dir) {
  auto j = io::read_json(dir / "series.json");
  TiltSeries t;
  t.nslice = j.at("dims").at(0).get<int>();
  t.nray = j.at("dims").at(1).get<int>();
  t.angles = j.at("angles").get<std::vector<double>>();
  if (static_cast<int>(t.angles.size()) != j.at("dims").at(2).get<int>()) throw io::IoError("angle count mismatch");
  if (!std::is_sorted(t.angles.begin(), t.angles.end()) ||
      std::adjacent_find(t.angles.begin(), t.angles.end()) != t.angles.end())
    throw io::IoError("tilt angles must be strictly increasing");
  auto raw = io::read_raw<float>(dir / "series.f32");
  if (raw.size() != static_cast<std::size_t>(t.nslice) * t.nray * t.nproj()) throw io::IoError("series.f32 has the wrong size");
  t.data.assign(raw.begin(), raw.end());
  return t;
}

void write_slice_pgms(const std::filesystem::path& dir, const Volume& v) {
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const double l = v.data.empty() ? 0.0 : *lo, h = v.data.empty() || *hi <= *lo ? l + 1.0 : *hi;
  for (int s = 0; s < v.nslice; ++s) {
    Eigen::ArrayXXd img = v.slice(s).reshaped<Eigen::RowMajor>(v.n, v.n).array();
    char name[32];
    std::snprintf(name, sizeof name, "slice_%03d.pgm", s);
    io::write_pgm(dir / name, img, l, h);
  }
}

double relative_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  return (estimate - truth).norm() / truth.norm();
}

}  // namespace hflow::tomo
