#include <doctest.h>

#include <fstream>

#include "medvqa/net.hpp"
#include "medvqa/util.hpp"
#include "support.hpp"

using namespace medvqa;

TEST_SUITE("util") {

TEST_CASE("sha256 known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("field hashing is unambiguous") {
  const std::string_view a[] = {"ab", "c"};
  const std::string_view b[] = {"a", "bc"};
  CHECK(sha256_fields(a) != sha256_fields(b));
}

TEST_CASE("appender drops a torn tail and keeps a complete one") {
  testing::TempDir dir;
  const auto torn = dir / "torn.jsonl";
  std::ofstream(torn) << "{\"a\":1}\n{\"b\":";
  JsonlAppender(torn).append({{"c", 3}});
  const auto lines = read_jsonl(torn, "t");
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].value["c"] == 3);

  const auto whole = dir / "whole.jsonl";
  std::ofstream(whole) << "{\"a\":1}";
  JsonlAppender(whole).append({{"b", 2}});
  CHECK(read_jsonl(whole, "t").size() == 2);
}

TEST_CASE("reader tolerates only a torn final line") {
  testing::TempDir dir;
  std::ofstream(dir / "a.jsonl") << "{\"a\":1}\n\n{\"b\":";
  CHECK(read_jsonl(dir / "a.jsonl", "t", true).size() == 1);
  CHECK_THROWS(read_jsonl(dir / "a.jsonl", "t", false));
  std::ofstream(dir / "b.jsonl") << "{oops\n{\"a\":1}\n";
  CHECK_THROWS(read_jsonl(dir / "b.jsonl", "t", true));
}

TEST_CASE("fixed formatting") {
  CHECK(format_fixed(2.666666, 2) == "2.67");
  CHECK(format_fixed(-0.05, 4) == "-0.0500");
}

TEST_CASE("backoff doubles up to the cap") {
  RetryPolicy p{3, std::chrono::milliseconds(100), std::chrono::milliseconds(300)};
  CHECK(p.delay_for(0).count() == 100);
  CHECK(p.delay_for(1).count() == 200);
  CHECK(p.delay_for(2).count() == 300);
}

TEST_CASE("parallel_for visits every index once within the bound") {
  std::vector<std::atomic<int>> hits(50);
  std::atomic<int> live{0}, peak{0};
  parallel_for(hits.size(), 3, [&](std::size_t i) {
    const int now = ++live;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {}
    hits[i]++;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
    --live;
  });
  for (auto& h : hits) CHECK(h == 1);
  CHECK(peak <= 3);
}

TEST_CASE("retryable statuses") {
  CHECK(is_retryable_status(503));
  CHECK(is_retryable_status(429));
  CHECK(is_retryable_status(408));
  CHECK_FALSE(is_retryable_status(400));
  CHECK_FALSE(is_retryable_status(404));
}

}  // TEST_SUITE
