#include <doctest.h>

#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "hflow/streamlog/microbatch.hpp"
#include "tempdir.hpp"

using namespace hflow;
using namespace hflow::streamlog;

namespace {

const bool registered = [] {
  register_stream_tasks();
  engine::TaskRegistry::global().add_partition("test.count_elems", [](engine::TaskContext& ctx, std::vector<engine::Bytes> e) {
    std::vector<float> n{static_cast<float>(e.size())};
    ctx.communicator().allreduce(std::span(n), collectives::ReduceOp::sum);
    return std::vector<engine::Bytes>{engine::encode_vec<float>(n)};
  });
  return true;
}();

std::string f32(std::initializer_list<float> v) {
  return engine::encode_vec<float>(std::span<const float>(v.begin(), v.size()));
}


}  // namespace

TEST_CASE("crc32c check value") {
  CHECK(crc32c("123456789") == 0xE3069283u);
  CHECK(crc32c("") == 0u);
}

TEST_CASE("topics, offsets and reads") {
  TempDir tmp;
  Log log(tmp.path);
  log.create_topic("topic-0", 1);
  CHECK_THROWS_AS(log.create_topic("topic-0", 1), LogError);
  CHECK_THROWS_AS(log.create_topic("bad/name", 1), LogError);
  CHECK_THROWS_AS(log.create_topic("zero", 0), LogError);

  CHECK(log.produce("topic-0", 0, "", "a") == 0);
  CHECK(log.produce("topic-0", 0, "k", "bb") == 1);
  CHECK(log.produce("topic-0", 0, "", std::string("\0\xff", 2)) == 2);
  CHECK(log.next_offset("topic-0", 0) == 3);
  CHECK_THROWS_AS(log.produce("topic-0", 1, "", "x"), LogError);
  CHECK_THROWS_AS(log.produce("nope", 0, "", "x"), LogError);

  auto recs = log.read_range({"topic-0", 0, 0, 3});
  REQUIRE(recs.size() == 3);
  CHECK(recs[1] == Record{"k", "bb", 1});
  CHECK(recs[2].value == std::string("\0\xff", 2));
  CHECK(log.read_range({"topic-0", 0, 2, 2}).empty());
  CHECK(log.read_range({"topic-0", 0, 1, 2}) == std::vector<Record>{recs[1]});
  CHECK_THROWS_AS(log.read_range({"topic-0", 0, 0, 4}), RangeError);
  CHECK_THROWS_AS(log.read_range({"topic-0", 0, 2, 1}), RangeError);

  // topics are independent
  for (int j = 1; j < 4; ++j) log.create_topic("topic-" + std::to_string(j), 1);
  CHECK(log.produce("topic-3", 0, "", "z") == 0);
  CHECK(log.next_offset("topic-1", 0) == 0);
  CHECK(log.next_offset("topic-0", 0) == 3);

  log.create_topic("multi", 3);
  CHECK(log.partition_count("multi") == 3);
  CHECK(log.produce("multi", 2, "", "x") == 0);
  CHECK(log.produce("multi", 2, "", "y") == 1);
  CHECK(log.produce("multi", 0, "", "x") == 0);
}

TEST_CASE("concurrent producers get dense offsets") {
  TempDir tmp;
  Log log(tmp.path);
  log.create_topic("t", 1);
  constexpr int kThreads = 4, kEach = 250;
  std::vector<std::vector<std::uint64_t>> got(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < kEach; ++i)
        got[t].push_back(log.produce("t", 0, std::to_string(t), std::to_string(t) + ":" + std::to_string(i)));
    });
  for (auto& th : threads) th.join();

  std::set<std::uint64_t> all;
  for (auto& g : got) {
    CHECK(std::is_sorted(g.begin(), g.end()));  // per-producer order is kept
    all.insert(g.begin(), g.end());
  }
  CHECK(all.size() == kThreads * kEach);
  CHECK(*all.rbegin() == kThreads * kEach - 1);
  auto recs = log.read_range({"t", 0, 0, kThreads * kEach});
  for (int t = 0; t < kThreads; ++t)
    for (int i = 0; i < kEach; ++i)
      CHECK(recs[got[t][i]].value == std::to_string(t) + ":" + std::to_string(i));
}

TEST_CASE("segment layout is bit exact") {
  TempDir tmp;
  Log log(tmp.path);
  log.create_topic("t", 1);
  log.produce("t", 0, "ab", "xyz");
  auto segs = log.segments("t", 0);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].filename() == "t-0-0.seg");
  std::ifstream in(segs[0], std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // length 13 = crc 4 + key_len 4 + key 2 + value 3
  std::string body = std::string("\x02\0\0\0", 4) + "ab" + "xyz";
  std::uint32_t crc = crc32c(body);
  std::string expect = std::string("\x0d\0\0\0", 4) + std::string(reinterpret_cast<const char*>(&crc), 4) + body;
  CHECK(bytes == expect);

  std::ifstream side(tmp.path / "t-0.json");
  std::string json((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  CHECK(json.find("\"next_offset\":1") != std::string::npos);
}

TEST_CASE("segments roll and oversized records are rejected") {
  TempDir tmp;
  Log log(tmp.path, {.segment_bytes = 64});
  log.create_topic("t", 1);
  // each record: 12 header + 20 value = 32 bytes, two per segment
  for (int i = 0; i < 5; ++i) CHECK(log.produce("t", 0, "", std::string(20, char('a' + i))) == std::uint64_t(i));
  auto segs = log.segments("t", 0);
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].filename() == "t-0-0.seg");
  CHECK(segs[1].filename() == "t-0-2.seg");
  CHECK(segs[2].filename() == "t-0-4.seg");
  CHECK(std::filesystem::file_size(segs[0]) == 64);
  CHECK_THROWS_AS(log.produce("t", 0, "", std::string(60, 'x')), LogError);
  auto recs = log.read_range({"t", 0, 1, 5});
  for (int i = 1; i < 5; ++i) CHECK(recs[i - 1].value == std::string(20, char('a' + i)));
}

TEST_CASE("reopen recovers records exactly") {
  TempDir tmp;
  std::vector<Record> before;
  std::mt19937 rng(11);
  {
    Log log(tmp.path, {.segment_bytes = 200});
    log.create_topic("a", 2);
    for (int i = 0; i < 40; ++i) {
      std::string v(rng() % 30, '\0');
      for (auto& c : v) c = static_cast<char>(rng());
      log.produce("a", i % 2, std::to_string(i), v);
    }
    before = log.read_range({"a", 1, 0, 20});
  }
  Log again(tmp.path, {.segment_bytes = 200});
  CHECK(again.has_topic("a"));
  CHECK(again.partition_count("a") == 2);
  CHECK(again.next_offset("a", 0) == 20);
  CHECK(again.read_range({"a", 1, 0, 20}) == before);
  CHECK(again.produce("a", 1, "", "more") == 20);
}

TEST_CASE("torn tail is cut, lost records are an error") {
  TempDir tmp;
  {
    Log log(tmp.path);
    log.create_topic("t", 1);
    for (int i = 0; i < 3; ++i) log.produce("t", 0, "", "value" + std::to_string(i));
  }
  auto seg = tmp.path / "t-0-0.seg";
  const auto full = std::filesystem::file_size(seg);
  {
    // half-written fourth record without a sidecar update
    std::ofstream out(seg, std::ios::binary | std::ios::app);
    out.write("\x20\0\0\0\x01\x02", 6);
  }
  {
    Log log(tmp.path);
    CHECK(log.next_offset("t", 0) == 3);
    CHECK(std::filesystem::file_size(seg) == full);
    CHECK(log.read_range({"t", 0, 2, 3})[0].value == "value2");
  }
  // drop a committed record: the sidecar still promises 3
  std::filesystem::resize_file(seg, full - 3);
  CHECK_THROWS_AS(Log(tmp.path), LogError);
}

TEST_CASE("dataset_from_ranges decodes per range") {
  TempDir tmp;
  Log log(tmp.path);
  log.create_topic("x", 1);
  log.create_topic("y", 1);
  for (int i = 0; i < 5; ++i) log.produce("x", 0, "", f32({float(i)}));
  for (int i = 0; i < 3; ++i) log.produce("y", 0, "", f32({float(i), 1.0f}));
  auto ds = dataset_from_ranges(log, {{"x", 0, 1, 4}, {"y", 0, 0, 3}, {"x", 0, 2, 2}, {"y", 0, 1, 3}}, "f32");
  REQUIRE(ds.num_partitions() == 4);
  CHECK(ds.kind() == "f32vec");
  CHECK(ds.partitions()[0].source->size() == 3);
  CHECK(ds.partitions()[2].source->empty());
  CHECK(ds.partitions()[3].source->size() == 2);
  CHECK((*ds.partitions()[0].source)[0] == f32({1.0f}));

  auto raw = dataset_from_ranges(log, {{"x", 0, 0, 1}}, "identity");
  CHECK((*raw.partitions()[0].source)[0] == log.read_range({"x", 0, 0, 1})[0].value);

  log.produce("x", 0, "", "abc");
  try {
    dataset_from_ranges(log, {{"x", 0, 0, 6}}, "f32");
    FAIL("decode should fail");
  } catch (const engine::TaskError& e) {
    CHECK(std::string(e.what()).find("x[0] offset 5") != std::string::npos);
  }
  CHECK_THROWS_AS(dataset_from_ranges(log, {{"x", 0, 0, 1}}, "nope"), ConfigError);
}

TEST_CASE("run_batch over 4 topics agrees with a serial oracle") {
  TempDir tmp;
  Log log(tmp.path);
  std::vector<std::string> topics;
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  double oracle = 0;
  for (int j = 0; j < 4; ++j) {
    topics.push_back("topic-" + std::to_string(j));
    log.create_topic(topics.back(), 1);
    for (int i = 0; i < 100; ++i) {
      float v = dist(rng);
      oracle += v;
      log.produce(topics.back(), 0, "", f32({v}));
    }
  }
  engine::Context ctx({.workers = 4});
  auto rep = run_batch(ctx, log, topics, 0, 100, engine::TaskSpec::collective(kStreamSumTask), "f32");
  CHECK(rep.partitions == 4);
  CHECK(rep.records == 400);
  REQUIRE(rep.results.size() == 4);
  for (const auto& r : rep.results) {
    auto v = engine::decode_vec<float>(r);
    CHECK(v[0] == doctest::Approx(oracle).epsilon(1e-4));
    CHECK(v[1] == 400.0f);
    CHECK(r == rep.results[0]);
  }

  auto empty = run_batch(ctx, log, topics, 100, 100, engine::TaskSpec::collective("test.count_elems"), "f32");
  CHECK(empty.records == 0);
  REQUIRE(empty.results.size() == 4);
  for (const auto& r : empty.results) CHECK(engine::decode_vec<float>(r)[0] == 0.0f);

  CHECK_THROWS_AS(run_batch(ctx, log, topics, 0, 101, engine::TaskSpec::collective(kStreamSumTask), "f32"),
                  RangeError);
}

TEST_CASE("run_stream processes windows between init and stop") {
  TempDir tmp;
  Log log(tmp.path);
  std::vector<std::string> topics{"topic-0", "topic-1"};
  for (auto& t : topics) log.create_topic(t, 1);
  engine::Context ctx({.workers = 2});
  StreamPlan plan{topics, std::chrono::milliseconds(20), "f32", 0, std::chrono::milliseconds(2000)};
  auto task = engine::TaskSpec::collective("test.count_elems");

  CHECK_THROWS_AS(run_stream(ctx, log, plan, task), ConfigError);
  log.create_topic(kControlTopic, 1);
  CHECK_THROWS_AS(run_stream(ctx, log, plan, task), ConfigError);  // init never arrives

  auto fill = [&](int from) {
    for (auto& t : topics)
      for (int i = 0; i < 10; ++i) log.produce(t, 0, "", f32({float(from + i)}));
  };
  fill(0);
  log.produce(kControlTopic, 0, "init", "");
  int seen = 0;
  auto report = run_stream(ctx, log, plan, task, [&](const BatchReport&) {
    if (++seen == 1) {
      fill(10);
    } else {
      log.produce(kControlTopic, 0, "stop", "");
    }
  });
  REQUIRE(report.batches.size() == 2);
  CHECK(report.batches[0].start == 0);
  CHECK(report.batches[0].until == 10);
  CHECK(report.batches[1].start == 10);
  CHECK(report.batches[1].until == 20);
  for (const auto& b : report.batches) {
    CHECK(b.records == 20);
    CHECK(engine::decode_vec<float>(b.results[0])[0] == 20.0f);
  }
}

TEST_CASE("run_stream counts idle intervals as skipped") {
  TempDir tmp;
  Log log(tmp.path);
  log.create_topic("topic-0", 1);
  log.create_topic(kControlTopic, 1);
  log.produce(kControlTopic, 0, "init", "");
  engine::Context ctx({.workers = 1});
  std::thread stopper([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    log.produce(kControlTopic, 0, "stop", "");
  });
  auto report = run_stream(ctx, log, {{"topic-0"}, std::chrono::milliseconds(20)},
                           engine::TaskSpec::collective("test.count_elems"));
  stopper.join();
  CHECK(report.batches.empty());
  CHECK(report.skipped_intervals >= 2);
}
