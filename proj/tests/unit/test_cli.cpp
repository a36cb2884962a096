#include <doctest.h>

#include <fstream>
#include <sstream>

#include "medvqa/cli.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/mock_services.hpp"
#include "medvqa/reporting.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "medvqa");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("validate on the reference fixture") {
  testing::TempDir dir;
  write_fixture_dataset(dir.path(), true);
  const auto r = cli({"--dataset-root", dir.path().string(), "validate", "--manifest", (dir / "manifest.jsonl").string(),
                      "--counts", (dir / "counts.jsonl").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("866") != std::string::npos);
  CHECK(r.out.find("716") != std::string::npos);
  CHECK(r.out.find("150") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);

  const auto j = cli({"--json", "validate", "--manifest", (dir / "manifest.jsonl").string(), "--counts",
                      (dir / "counts.jsonl").string()});
  CHECK(j.code == kExitOk);
  const json parsed = json::parse(j.out);
  CHECK(parsed.dump().find("866") != std::string::npos);
}

TEST_CASE("count mismatch fails with a stable code") {
  testing::TempDir dir;
  write_fixture_dataset(dir.path(), false, 20);
  std::ofstream(dir / "bad.jsonl") << R"({"label":"total","count":21})" << "\n";
  const auto r = cli({"validate", "--manifest", (dir / "manifest.jsonl").string(), "--counts", (dir / "bad.jsonl").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("dataset.COUNT_MISMATCH") != std::string::npos);
}

TEST_CASE("malformed manifest reports module, code and line") {
  testing::TempDir dir;
  std::ofstream(dir / "m.jsonl") << "{oops\n";
  const auto r = cli({"validate", "--manifest", (dir / "m.jsonl").string()});
  CHECK(r.code == kExitFailure);
  const json e = json::parse(r.err);
  CHECK(e["error"]["code"] == "dataset.MALFORMED_RECORD");
  CHECK(e["error"]["line"] == 1);
}

TEST_CASE("eval rejects orphan predictions") {
  testing::TempDir dir;
  write_fixture_dataset(dir.path(), false, 5);
  const std::string runs = (dir / "runs").string();
  REQUIRE(cli({"--runs-dir", runs, "--run", "r", "validate", "--manifest", (dir / "manifest.jsonl").string()}).code == 0);
  std::ofstream(dir / "p.jsonl") << R"({"sample_id":"ghost-1","model_id":"m","input_mode":"text","prediction":"Yes."})"
                                  << "\n";
  const auto r = cli({"--runs-dir", runs, "--run", "r", "eval", "--no-semantic", "--predictions", (dir / "p.jsonl").string()});
  CHECK(r.code != kExitOk);
  CHECK(r.err.find("ORPHAN_PREDICTION") != std::string::npos);
  CHECK(r.err.find("ghost-1") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({"no-such-command"}).code == kExitUsage);
  CHECK(cli({"--set", "bogus.key=1", "validate", "--manifest", "x"}).code == kExitUsage);
}

TEST_CASE("dry run has no side effects") {
  testing::TempDir dir;
  write_fixture_dataset(dir.path(), false, 5);
  const auto runs = dir / "runs";
  const auto r = cli({"--dry-run", "--runs-dir", runs.string(), "--cache-dir", (dir / "cache").string(), "--dataset-root",
                      dir.path().string(), "--run", "d", "pipeline", "--manifest", (dir / "manifest.jsonl").string()});
  CHECK(r.code == kExitOk);
  CHECK_FALSE(r.out.empty());
  CHECK_FALSE(fs::exists(runs));
  CHECK_FALSE(fs::exists(dir / "cache"));
}

TEST_CASE("fixtures command writes a dataset") {
  testing::TempDir dir;
  const auto r = cli({"fixtures", "--out", (dir / "ds").string(), "--size", "10"});
  CHECK(r.code == kExitOk);
  CHECK(load_manifest(dir / "ds/manifest.jsonl").size() == 10);
}

TEST_CASE("correlate on identical verdict files gives perfect agreement") {
  testing::TempDir dir;
  std::ofstream out(dir / "v.jsonl");
  const int levels[] = {0, 3, 1, 2, 3};
  for (const std::string rater : {"a", "b"}) {
    for (int i = 0; i < 5; ++i) {
      out << json({{"sample_id", "s" + std::to_string(i)}, {"rater_id", rater}, {"round", 1}, {"kind", "reasoning"},
                   {"level", levels[i]}})
                 .dump()
          << "\n";
    }
  }
  out.close();
  const auto r = cli({"--json", "correlate", "--verdicts", (dir / "v.jsonl").string()});
  CHECK(r.code == kExitOk);
  const json j = json::parse(r.out);
  CHECK(j.dump().find("\"pearson_r\":1.0") != std::string::npos);
  CHECK(j.dump().find("\"spearman_rho\":1.0") != std::string::npos);
}

}  // TEST_SUITE
