#include "hflow/ptycho/scan.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "hflow/io/raster.hpp"
#include "hflow/rng.hpp"

namespace hflow::ptycho {
namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

Real blobs(Eigen::Index n, Rng& rng, int count) {
  Real f = Real::Zero(n, n);
  for (int k = 0; k < count; ++k) {
    const double cr = rng.uniform(0, static_cast<double>(n));
    const double cc = rng.uniform(0, static_cast<double>(n));
    const double s = rng.uniform(4.0, 14.0);
    const double a = rng.uniform(-1.0, 1.0);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < n; ++r) {
        const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        f(r, c) += a * std::exp(-d2 / (2 * s * s));
      }
  }
  return f;
}

std::vector<float> to_f32_row_major(const Real& a) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(a.size()));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) out.push_back(static_cast<float>(a(r, c)));
  return out;
}

}  // namespace

std::vector<Position> grid_positions(Eigen::Index object_size, Eigen::Index probe_size, int grid) {
  if (grid < 1 || probe_size > object_size) throw std::invalid_argument("scan grid does not fit the object");
  std::vector<Eigen::Index> steps;
  const auto span = object_size - probe_size;
  for (int k = 0; k < grid; ++k)
    steps.push_back(grid == 1 ? 0 : static_cast<Eigen::Index>(std::lround(double(k) * double(span) / (grid - 1))));
  std::vector<Position> out;
  for (auto r : steps)
    for (auto c : steps) out.push_back({r, c});
  return out;
}

Field make_probe(Eigen::Index n) {
  Field p(n, n);
  const double mid = (static_cast<double>(n) - 1) / 2, sigma = static_cast<double>(n) / 5;
  const double alpha = std::numbers::pi / ((n / 2.0) * (n / 2.0));
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index r = 0; r < n; ++r) {
      const double d2 = (r - mid) * (r - mid) + (c - mid) * (c - mid);
      p(r, c) = std::polar(std::exp(-d2 / (2 * sigma * sigma)), alpha * d2);
    }
  return p;
}

Field make_object(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Real phase = blobs(n, rng, 16);
  Real amp = blobs(n, rng, 12);
  phase *= 1.2 / std::max(phase.abs().maxCoeff(), 1e-12);
  amp = (amp - amp.minCoeff()) / std::max(amp.maxCoeff() - amp.minCoeff(), 1e-12);
  Field o(n, n);
  for (Eigen::Index i = 0; i < o.size(); ++i) o(i) = std::polar(1.0 - 0.3 * amp(i), phase(i));
  return o;
}

Scan simulate_scan(const SimParams& params) {
  Scan s;
  s.seed = params.seed;
  s.object_rows = s.object_cols = params.object_size;
  s.probe = make_probe(params.probe_size);
  s.object = make_object(params.object_size, params.seed);
  s.positions = grid_positions(params.object_size, params.probe_size, params.grid);
  for (const auto& r : s.positions) s.intensity.push_back(simulate_intensity(exit_wave(s.probe, s.object, r)));
  return s;
}

State initial_state(const Scan& scan, Eigen::Index probe_size) {
  State st;
  const Eigen::Index n = probe_size;
  if (scan.probe.size() > 0) {
    st.probe = Field(n, n);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto r0 = std::max<Eigen::Index>(r - 1, 0), r1 = std::min<Eigen::Index>(r + 1, n - 1);
        const auto c0 = std::max<Eigen::Index>(c - 1, 0), c1 = std::min<Eigen::Index>(c + 1, n - 1);
        st.probe(r, c) = scan.probe.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).mean();
      }
  } else {
    st.probe = Field::Zero(n, n);
    const double mid = (static_cast<double>(n) - 1) / 2, rad = static_cast<double>(n) / 4;
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < n; ++r)
        if ((r - mid) * (r - mid) + (c - mid) * (c - mid) <= rad * rad) st.probe(r, c) = 1.0;
  }
  st.object = Field::Ones(scan.object_rows, scan.object_cols);
  return st;
}

Real illumination(const Field& probe, std::span<const Position> positions, Eigen::Index rows, Eigen::Index cols) {
  Real out = Real::Zero(rows, cols);
  const Real a = probe.abs2();
  for (const auto& r : positions) out.block(r.row, r.col, probe.rows(), probe.cols()) += a;
  return out;
}

Mask well_covered(const Real& illum, double fraction) { return illum >= fraction * illum.maxCoeff(); }

double complex_correlation(const Field& a, const Field& b, const Mask& mask) {
  std::complex<double> dot = 0;
  double na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!mask(i)) continue;
    dot += a(i) * std::conj(b(i));
    na += std::norm(a(i));
    nb += std::norm(b(i));
  }
  return na > 0 && nb > 0 ? std::abs(dot) / std::sqrt(na * nb) : 0.0;
}

Field align_phase(const Field& a, const Field& b, const Mask& mask) {
  std::complex<double> dot = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (mask(i)) dot += b(i) * std::conj(a(i));
  return std::abs(dot) > 0 ? Field(a * (dot / std::abs(dot))) : a;
}

void write_complex(const std::filesystem::path& path, const Field& field) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(2 * field.size()));
  for (Eigen::Index r = 0; r < field.rows(); ++r)
    for (Eigen::Index c = 0; c < field.cols(); ++c) {
      out.push_back(static_cast<float>(field(r, c).real()));
      out.push_back(static_cast<float>(field(r, c).imag()));
    }
  io::write_raw(path, out);
}

Field read_complex(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  auto v = io::read_raw<float>(path);
  if (v.size() != static_cast<std::size_t>(2 * rows * cols)) throw io::IoError(path.string() + ": unexpected size");
  Field f(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c, k += 2) f(r, c) = {v[k], v[k + 1]};
  return f;
}

void write_scan(const std::filesystem::path& dir, const Scan& scan) {
  std::filesystem::create_directories(dir);
  const Eigen::Index n = scan.intensity.empty() ? 0 : scan.intensity[0].rows();
  const Eigen::Index m = scan.intensity.empty() ? 0 : scan.intensity[0].cols();
  std::vector<float> frames;
  for (const auto& i : scan.intensity) {
    auto f = to_f32_row_major(i);
    frames.insert(frames.end(), f.begin(), f.end());
  }
  io::write_raw(dir / "frames.f32", frames);
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : scan.positions) positions.push_back({p.row, p.col});
  nlohmann::json j{{"dims", {scan.intensity.size(), n, m}},
                   {"dtype", "float32"},
                   {"positions", positions},
                   {"seed", scan.seed},
                   {"object_dims", {scan.object_rows, scan.object_cols}}};
  if (scan.probe.size() > 0) {
    write_complex(dir / "probe.c64", scan.probe);
    j["probe"] = {{"file", "probe.c64"}, {"dims", {scan.probe.rows(), scan.probe.cols()}}, {"dtype", "complex64"}};
  }
  if (scan.object.size() > 0) {
    write_complex(dir / "object.c64", scan.object);
    j["object"] = {{"file", "object.c64"}, {"dims", {scan.object.rows(), scan.object.cols()}}, {"dtype", "complex64"}};
  }
  io::write_json(dir / "scan.json", j);
}

Scan read_scan(const std::filesystem::path& dir) {
  auto j = io::read_json(dir / "scan.json");
  Scan s;
  try {
    if (j.at("dtype") != "float32") throw io::IoError("frames must be float32");
    const auto count = j.at("dims").at(0).get<std::size_t>();
    const auto n = j.at("dims").at(1).get<Eigen::Index>(), m = j.at("dims").at(2).get<Eigen::Index>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.object_rows = j.at("object_dims").at(0).get<Eigen::Index>();
    s.object_cols = j.at("object_dims").at(1).get<Eigen::Index>();
    for (const auto& p : j.at("positions")) s.positions.push_back({p.at(0).get<Eigen::Index>(), p.at(1).get<Eigen::Index>()});
    if (s.positions.size() != count) throw io::IoError("position count does not match frame count");
    auto frames = io::read_raw<float>(dir / "frames.f32");
    if (frames.size() != count * static_cast<std::size_t>(n * m)) throw io::IoError("frames.f32 has the wrong size");
    std::size_t k = 0;
    for (std::size_t f = 0; f < count; ++f) {
      Real a(n, m);
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < m; ++c) a(r, c) = frames[k++];
      s.intensity.push_back(std::move(a));
    }
    if (j.contains("probe"))
      s.probe = read_complex(dir / j["probe"]["file"].get<std::string>(), j["probe"]["dims"][0], j["probe"]["dims"][1]);
    if (j.contains("object"))
      s.object = read_complex(dir / j["object"]["file"].get<std::string>(), j["object"]["dims"][0], j["object"]["dims"][1]);
  } catch (const nlohmann::json::exception& e) {
    throw io::IoError((dir / "scan.json").string() + ": " + e.what());
  }
  return s;
}

void write_phase_pgm(const std::filesystem::path& path, const Field& field) {
  io::write_pgm(path, field.arg(), -std::numbers::pi, std::numbers::pi);
}

void write_epsilon_csv(const std::filesystem::path& path, const std::vector<double>& epsilon) {
  std::ostringstream out;
  out.precision(17);
  out << "iter,epsilon\n";
  for (std::size_t i = 0; i < epsilon.size(); ++i) out << i << "," << epsilon[i] << "\n";
  io::write_file(path, out.str());
}

}  // namespace hflow::ptycho
