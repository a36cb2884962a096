#include <doctest.h>

#include <httplib.h>

#include <sstream>

#include "medvqa/cli.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/reporting.hpp"
#include "medvqa/serve.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  testing::TempDir dir;
  fs::path runs = dir / "runs";
  DatasetManifest manifest;

  Fixture() {
    write_fixture_dataset(dir.path(), false, 10);
    manifest = load_manifest(dir / "manifest.jsonl");
    create_run(runs, "r");
    record_artifact(runs, "r", Artifact::Manifest, serialize_manifest(manifest));
    std::string lines;
    for (const auto& s : manifest.samples()) {
      Prediction p;
      p.sample_id = s.id;
      p.model_id = "vlm";
      p.prediction = "Yes. The finding is clear.";
      lines += prediction_to_record(p).dump() + "\n";
    }
    record_artifact(runs, "r", Artifact::Predictions, lines);
  }

  ServeOptions options() const {
    ServeOptions o;
    o.runs_dir = runs;
    o.dataset_root = dir.path();
    o.audio_root = dir / "cache";
    return o;
  }
};

struct Api {
  ReviewServer server;
  httplib::Client client;
  explicit Api(ServeOptions o) : server(std::move(o)), client("127.0.0.1", (server.start(), server.port())) {}
  ~Api() { server.stop(); }

  json get(const std::string& path, const std::string& rater = "", int* status = nullptr) {
    httplib::Headers h;
    if (!rater.empty()) h.emplace("X-Rater", rater);
    auto res = client.Get(path, h);
    REQUIRE(res);
    if (status) *status = res->status;
    return json::parse(res->body, nullptr, false);
  }
  std::pair<int, json> post(const json& body, const std::string& rater) {
    auto res = client.Post("/api/verdicts", {{"X-Rater", rater}}, body.dump(), "application/json");
    REQUIRE(res);
    return {res->status, json::parse(res->body, nullptr, false)};
  }
};

}  // namespace

TEST_SUITE("serve") {

TEST_CASE("queue lists every predicted sample in manifest order") {
  Fixture f;
  Api api(f.options());
  const json q = api.get("/api/queue", "alice");
  REQUIRE(q["items"].size() == 10);
  CHECK(q["items"][0]["sample"]["id"] == f.manifest.samples()[0].id);
  CHECK(q["completed"] == 0);
  CHECK(q["next"] == 0);
  CHECK(q["model_id"] == "vlm");
  CHECK(api.get("/api/samples")["samples"].size() == 10);
  CHECK(api.get("/api/predictions?model=vlm")["predictions"].size() == 10);
}

TEST_CASE("a rater completes the queue and a reload resumes past it") {
  Fixture f;
  {
    Api api(f.options());
    for (std::size_t i = 0; i < 10; ++i) {
      const auto [status, body] =
          api.post({{"sample_id", f.manifest.samples()[i].id}, {"structure_ok", true}, {"level", 2}}, "alice");
      CHECK(status == 201);
      CHECK(body["progress"]["completed"] == i + 1);
    }
    const json p = api.get("/api/progress", "alice");
    CHECK(p["completed"] == 10);
    CHECK(p["done"] == true);
  }
  const auto verdicts = load_verdicts(f.runs / "r/verdicts.jsonl");
  CHECK(std::count_if(verdicts.begin(), verdicts.end(),
                      [](const JudgeVerdict& v) { return v.kind == VerdictKind::Reasoning; }) == 10);
  CHECK_NOTHROW(load_bundle(f.runs, "r"));

  Api again(f.options());
  const json p = again.get("/api/progress", "alice");
  CHECK(p["completed"] == 10);
  CHECK(p["next"].is_null());
  CHECK(p["done"] == true);
  CHECK(again.get("/api/progress", "bob")["next"] == 0);
}

TEST_CASE("forged levels and duplicates are rejected") {
  Fixture f;
  Api api(f.options());
  const std::string id = f.manifest.samples()[0].id;
  auto [bad, bad_body] = api.post({{"sample_id", id}, {"kind", "reasoning"}, {"level", 7}}, "alice");
  CHECK(bad == 400);
  CHECK(bad_body["error"]["code"] == "OUT_OF_RANGE_LEVEL");
  CHECK_FALSE(fs::exists(f.runs / "r/verdicts.jsonl"));

  CHECK(api.post({{"sample_id", id}, {"kind", "reasoning"}, {"level", 1}}, "alice").first == 201);
  auto [dup, dup_body] = api.post({{"sample_id", id}, {"kind", "reasoning"}, {"level", 2}}, "alice");
  CHECK(dup == 409);
  CHECK(dup_body["error"]["code"] == "DUPLICATE_VERDICT");
  CHECK(api.post({{"sample_id", id}, {"kind", "reasoning"}, {"level", 2}, {"revise", true}}, "alice").first == 201);
  CHECK(api.get("/api/queue", "alice")["items"][0]["verdict"]["level"] == 2);

  CHECK(api.post({{"sample_id", "nope"}, {"kind", "reasoning"}, {"level", 1}}, "alice").first == 404);
  CHECK(api.post({{"sample_id", id}, {"level", 1}}, "").first == 400);
}

TEST_CASE("identical raters agree perfectly, matching correlate") {
  Fixture f;
  {
    Api api(f.options());
    const int levels[] = {0, 1, 2, 3, 3, 2, 1, 0, 2, 3};
    for (const std::string rater : {"alice", "bob"}) {
      for (std::size_t i = 0; i < 10; ++i) {
        api.post({{"sample_id", f.manifest.samples()[i].id}, {"structure_ok", true}, {"level", levels[i]}}, rater);
      }
    }
    const json a = api.get("/api/agreement");
    REQUIRE(a["results"].size() == 1);
    CHECK(a["results"][0]["pearson_r"].get<double>() == doctest::Approx(1.0));
    CHECK(a["results"][0]["spearman_rho"].get<double>() == doctest::Approx(1.0));

    std::ostringstream out, err;
    REQUIRE(run_cli({"medvqa", "--json", "correlate", "--verdicts", (f.runs / "r/verdicts.jsonl").string()}, out, err) == 0);
    const json c = json::parse(out.str());
    CHECK(c.dump().find(a["results"][0].dump()) != std::string::npos);
  }
}

TEST_CASE("media paths stay inside their roots") {
  Fixture f;
  Api api(f.options());
  auto ok = api.client.Get("/api/media/image/" + f.manifest.samples()[0].image_path);
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(ok->get_header_value("Content-Type") == "image/png");
  for (const std::string bad : {"/api/media/image/../runs/index.jsonl", "/api/media/image/%2e%2e/manifest.jsonl",
                                "/api/media/image/images/../../etc/passwd", "/api/media/audio/missing.wav"}) {
    auto res = api.client.Get(bad);
    REQUIRE(res);
    CHECK(res->status == 404);
  }
}

}  // TEST_SUITE
