#include <signal.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "hflow/bench/allreduce.hpp"
#include "hflow/builtin.hpp"
#include "hflow/io/raster.hpp"
#include "hflow/ptycho/distributed.hpp"
#include "hflow/rendezvous/server.hpp"
#include "hflow/rng.hpp"
#include "hflow/streamlog/microbatch.hpp"
#include "hflow/tomo/art.hpp"

namespace fs = std::filesystem;
using namespace hflow;

namespace {

constexpr int kOk = 0, kUsage = 1, kIncorrect = 2, kRuntime = 3;

// A check that failed; the run is reported as incorrect.
struct Incorrect : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int cmd_serve(const std::string& rdv, const std::string& groups) {
  // Block the signals before any server thread exists, then wait for one.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::unique_ptr<rendezvous::Server> server;
  try {
    server = std::make_unique<rendezvous::Server>(net::Endpoint::parse(rdv), rendezvous::parse_group_list(groups));
  } catch (const std::exception& e) {
    std::cerr << "serve: " << e.what() << "\n";
    return kUsage;
  }
  std::cout << "listening on " << server->endpoint().str() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server->shutdown();
  std::cout << "shutdown" << std::endl;
  return kOk;
}

int cmd_bench(const std::vector<int>& workers, std::size_t n, int repeats, const std::string& out) {
  std::vector<bench::AllreduceRow> rows;
  for (int p : workers) {
    if (p < 1) throw CLI::ValidationError("--workers", "worker counts must be positive");
    engine::Context ctx({.workers = p, .launch = {}});
    auto drv = bench::bench_driver_collect(ctx, p, n, repeats);
    auto col = bench::bench_collective(ctx, p, n, repeats);
    for (const auto* r : {&drv, &col}) {
      auto oracle = r->scenario == "driver_collect" ? bench::oracle_driver(p, n) : bench::oracle_collective(p, n, repeats);
      double want = 0;
      for (float v : oracle) want += v;
      if (r->max_rel_error > 1e-6 || !r->ranks_agree || std::abs(r->checksum - want) > 1e-9 * std::abs(want))
        throw Incorrect(r->scenario + " with " + std::to_string(p) + " workers disagrees with the serial oracle");
    }
    rows.push_back(drv);
    rows.push_back(col);
  }
  std::ostringstream csv;
  csv.precision(12);
  csv << "scenario,workers,seconds,checksum\n";
  for (const auto& r : rows) csv << r.scenario << "," << r.workers << "," << r.seconds << "," << r.checksum << "\n";
  std::cout << csv.str();
  if (!out.empty()) io::write_file(out, csv.str());
  return kOk;
}

ptycho::Algorithm parse_algorithm(const std::string& s) {
  return s == "dm" ? ptycho::Algorithm::dm : ptycho::Algorithm::raar;
}

int cmd_ptycho_sim(const fs::path& out, std::uint64_t seed) {
  auto scan = ptycho::simulate_scan({.seed = seed});
  ptycho::write_scan(out, scan);
  std::cout << "wrote " << scan.intensity.size() << " frames to " << out.string() << "\n";
  return kOk;
}

int cmd_ptycho_recon(const fs::path& out, int workers, int partitions, double beta, int iters,
                     const std::string& algorithm) {
  auto scan = ptycho::read_scan(out);
  const auto probe_size = scan.intensity.empty() ? 0 : scan.intensity[0].rows();
  ptycho::SolverParams params;
  params.algorithm = parse_algorithm(algorithm);
  params.beta = beta;
  params.iterations = iters;
  engine::Context ctx({.workers = std::max(workers, partitions), .launch = {}});
  const auto t0 = Clock::now();
  auto rec = ptycho::reconstruct_distributed(ctx, scan, ptycho::initial_state(scan, probe_size), params, partitions);
  const double secs = since(t0);

  ptycho::write_phase_pgm(out / "object_phase.pgm", rec.state.object);
  ptycho::write_epsilon_csv(out / "epsilon.csv", rec.epsilon);
  ptycho::write_complex(out / "recon_object.c64", rec.state.object);
  ptycho::write_complex(out / "recon_probe.c64", rec.state.probe);
  nlohmann::json report{{"iterations", iters}, {"partitions", partitions}, {"seconds", secs},
                        {"epsilon_first", rec.epsilon.front()}, {"epsilon_last", rec.epsilon.back()}};
  std::cout << "epsilon " << rec.epsilon.front() << " -> " << rec.epsilon.back() << " in " << secs << " s\n";
  if (scan.object.size() > 0 && scan.probe.size() > 0) {
    auto mask = ptycho::well_covered(ptycho::illumination(scan.probe, scan.positions, scan.object_rows, scan.object_cols));
    double corr = ptycho::complex_correlation(rec.state.object, scan.object, mask);
    report["correlation"] = corr;
    ptycho::write_phase_pgm(out / "object_phase_aligned.pgm", ptycho::align_phase(rec.state.object, scan.object, mask));
    std::cout << "correlation with truth " << corr << "\n";
  }
  io::write_json(out / "report.json", report);
  return kOk;
}

int cmd_tomo_sim(const fs::path& out, int nray, int nslice, int angles) {
  tomo::Geometry geom{nray, 1.0, 1.0, tomo::tilt_angles(angles)};
  auto phantom = tomo::make_phantom(nslice, nray);
  tomo::write_volume(out / "phantom", phantom);
  tomo::write_series(out, tomo::simulate_projections(phantom, geom));
  std::cout << "wrote " << nslice << " x " << nray << " x " << angles << " tilt series to " << out.string() << "\n";
  return kOk;
}

int cmd_tomo_recon(const fs::path& out, std::vector<int> workers, int partitions, double beta, int iters) {
  auto series = tomo::read_series(out);
  tomo::Geometry geom{series.nray, 1.0, 1.0, series.angles};
  tomo::ArtParams params{.beta = beta, .sweeps = iters};
  std::sort(workers.begin(), workers.end());
  std::ostringstream csv;
  csv.precision(9);
  csv << "workers,seconds\n";
  std::optional<tomo::Volume> first;
  for (int w : workers) {
    if (w < 1) throw CLI::ValidationError("--workers", "worker counts must be positive");
    const int parts = partitions > 0 ? partitions : std::min(w, series.nslice);
    engine::Context ctx({.workers = w, .launch = {}});
    const auto t0 = Clock::now();
    auto vol = tomo::reconstruct_volume(ctx, series, geom, params, parts);
    const double secs = since(t0);
    csv << w << "," << secs << "\n";
    std::cout << w << " workers, " << parts << " partitions: " << secs << " s\n";
    if (first && first->data != vol.data) throw Incorrect("volumes differ between worker counts");
    if (!first) first = std::move(vol);
  }
  tomo::write_volume(out / "recon", *first);
  tomo::write_slice_pgms(out / "recon", *first);
  io::write_file(out / "timing.csv", csv.str());
  if (fs::exists(out / "phantom" / "volume.json")) {
    auto truth = tomo::read_volume(out / "phantom");
    for (int s = 0; s < truth.nslice; ++s)
      std::cout << "slice " << s << " relative error " << tomo::relative_error(first->slice(s), truth.slice(s)) << "\n";
  }
  return kOk;
}

int cmd_stream_demo(fs::path dir, int topics, int records, int batches, int workers, std::uint64_t seed) {
  std::optional<fs::path> scratch;
  if (dir.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "hflow-stream-XXXXXX").string();
    dir = ::mkdtemp(tmpl.data());
    scratch = dir;
  }
  streamlog::Log log(dir);
  std::vector<std::string> names;
  for (int j = 0; j < topics; ++j) {
    names.push_back("topic-" + std::to_string(j));
    if (!log.has_topic(names.back())) log.create_topic(names.back(), 1);
  }
  if (!log.has_topic(streamlog::kControlTopic)) log.create_topic(streamlog::kControlTopic, 1);
  std::uint64_t start = log.next_offset(names[0], 0);
  for (const auto& t : names)
    if (log.next_offset(t, 0) != start) throw std::runtime_error("topics in " + dir.string() + " are out of step");

  Rng rng(seed);
  std::vector<double> oracle;  // per batch
  auto produce_batch = [&] {
    double sum = 0;
    for (const auto& t : names)
      for (int i = 0; i < records; ++i) {
        float v = static_cast<float>(rng.uniform(-1, 1));
        sum += v;
        log.produce(t, 0, "", engine::encode_vec<float>(std::span<const float>(&v, 1)));
      }
    oracle.push_back(sum);
  };
  produce_batch();
  log.produce(streamlog::kControlTopic, 0, "init", "");

  engine::Context ctx({.workers = std::max(workers, topics), .launch = {}});
  streamlog::StreamPlan plan{names, std::chrono::milliseconds(50), "f32", start, std::chrono::milliseconds(10000)};
  int seen = 0;
  bool ok = true;
  auto report = streamlog::run_stream(ctx, log, plan, engine::TaskSpec::collective(streamlog::kStreamSumTask),
                                      [&](const streamlog::BatchReport& b) {
                                        auto v = engine::decode_vec<float>(b.results.at(0));
                                        const double want = oracle.at(static_cast<std::size_t>(seen));
                                        bool good = std::abs(v[0] - want) <= 1e-6 * std::max(1.0, std::abs(want)) &&
                                                    v[1] == static_cast<float>(topics * records);
                                        for (const auto& r : b.results) good = good && r == b.results[0];
                                        ok = ok && good;
                                        std::printf("batch %d offsets [%llu,%llu) partitions %zu records %llu sum %.6f oracle %.6f %.3f s%s\n",
                                                    seen, static_cast<unsigned long long>(b.start),
                                                    static_cast<unsigned long long>(b.until), b.partitions,
                                                    static_cast<unsigned long long>(b.records), v[0], want, b.seconds,
                                                    good ? "" : " MISMATCH");
                                        if (++seen < batches)
                                          produce_batch();
                                        else
                                          log.produce(streamlog::kControlTopic, 0, "stop", "");
                                      });
  std::printf("%zu batches, %llu idle intervals\n", report.batches.size(),
              static_cast<unsigned long long>(report.skipped_intervals));
  if (scratch) fs::remove_all(*scratch);
  if (!ok || static_cast<int>(report.batches.size()) != batches) throw Incorrect("stream results disagree with the oracle");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  register_builtin_tasks();
  // The engine starts workers by running this binary with --worker.
  if (auto code = engine::run_worker_if_requested(argc, argv)) return *code;

  CLI::App app{"hflow: driver, rendezvous server, collectives and pipelines"};
  app.require_subcommand(1);

  std::string rdv = "127.0.0.1:0", groups;
  auto* serve = app.add_subcommand("serve", "run a rendezvous server until SIGINT/SIGTERM");
  serve->add_option("--rdv", rdv, "bind endpoint host:port");
  serve->add_option("--groups", groups, "process groups, e.g. g0:4,g1:2")->required();

  std::vector<int> workers{1, 2, 4, 8};
  std::size_t n = 2000000;
  int repeats = 10;
  std::string out;
  auto* bench = app.add_subcommand("bench-allreduce", "driver-collect vs collective allreduce timing");
  bench->add_option("--workers", workers, "worker counts, comma separated")->delimiter(',');
  bench->add_option("--n", n, "float32 elements per buffer")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "repetitions per path")->check(CLI::PositiveNumber);
  bench->add_option("--out", out, "also write the CSV here");

  std::uint64_t seed = 1;
  int pworkers = 0, partitions = 1, iters = 100;
  double beta = 0.9;
  std::string algorithm = "raar";
  auto* ptycho = app.add_subcommand("ptycho", "ptychography simulation and reconstruction");
  ptycho->require_subcommand(1);
  auto* psim = ptycho->add_subcommand("sim", "write a synthetic scan");
  psim->add_option("--out", out, "scan directory")->required();
  psim->add_option("--seed", seed, "object seed");
  auto* precon = ptycho->add_subcommand("recon", "reconstruct the scan in --out");
  precon->add_option("--out", out, "scan directory; results are written beside it")->required();
  precon->add_option("--workers", pworkers, "worker processes (default: partitions)")->check(CLI::NonNegativeNumber);
  precon->add_option("--partitions", partitions, "frame partitions, one rank each")->check(CLI::PositiveNumber);
  precon->add_option("--beta", beta, "relaxation")->check(CLI::Range(0.0, 1.0));
  precon->add_option("--iters", iters, "iterations")->check(CLI::NonNegativeNumber);
  precon->add_option("--algorithm", algorithm, "raar|dm")->check(CLI::IsMember({"raar", "dm"}));

  int nray = 64, nslice = 8, angles = 90, tparts = 0, sweeps = 10;
  double art_beta = 1.0;
  std::vector<int> tworkers{1};
  auto* tomo_cmd = app.add_subcommand("tomo", "ART tomography simulation and reconstruction");
  tomo_cmd->require_subcommand(1);
  auto* tsim = tomo_cmd->add_subcommand("sim", "write a phantom and its tilt series");
  tsim->add_option("--out", out, "output directory")->required();
  tsim->add_option("--nray", nray, "rays per projection = grid side")->check(CLI::PositiveNumber);
  tsim->add_option("--nslice", nslice, "slices")->check(CLI::PositiveNumber);
  tsim->add_option("--angles", angles, "tilt angles over [-90, 90)")->check(CLI::PositiveNumber);
  auto* trecon = tomo_cmd->add_subcommand("recon", "reconstruct the tilt series in --out");
  trecon->add_option("--out", out, "series directory")->required();
  trecon->add_option("--workers", tworkers, "worker counts to time, comma separated")->delimiter(',');
  trecon->add_option("--partitions", tparts, "slice partitions (default: min(workers, Nslice))")
      ->check(CLI::NonNegativeNumber);
  trecon->add_option("--beta", art_beta, "ART relaxation in (0, 2)")->check(CLI::Range(0.0, 2.0));
  trecon->add_option("--iters", sweeps, "sweeps")->check(CLI::PositiveNumber);

  int topics = 4, records = 100, batches = 2, sworkers = 0;
  auto* stream = app.add_subcommand("stream-demo", "produce records and process them as micro-batches");
  stream->add_option("--out", out, "log directory (default: temporary)");
  stream->add_option("--topics", topics, "topics topic-0..")->check(CLI::PositiveNumber);
  stream->add_option("--records", records, "records per topic per batch")->check(CLI::PositiveNumber);
  stream->add_option("--batches", batches, "micro-batches")->check(CLI::PositiveNumber);
  stream->add_option("--workers", sworkers, "worker processes (default: topics)")->check(CLI::NonNegativeNumber);
  stream->add_option("--seed", seed, "value seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*serve) return cmd_serve(rdv, groups);
    if (*bench) return cmd_bench(workers, n, repeats, out);
    if (*psim) return cmd_ptycho_sim(out, seed);
    if (*precon) return cmd_ptycho_recon(out, pworkers, partitions, beta, iters, algorithm);
    if (*tsim) return cmd_tomo_sim(out, nray, nslice, angles);
    if (*trecon) return cmd_tomo_recon(out, tworkers, tparts, art_beta, sweeps);
    if (*stream) return cmd_stream_demo(out, topics, records, batches, sworkers, seed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const Incorrect& e) {
    std::cerr << "incorrect result: " << e.what() << "\n";
    return kIncorrect;
  } catch (const ptycho::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kIncorrect;
  } catch (const tomo::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kIncorrect;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
