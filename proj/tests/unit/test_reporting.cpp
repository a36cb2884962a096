#include <doctest.h>

#include <fstream>

#include "medvqa/error.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/reporting.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

std::vector<Prediction> echo_predictions(const DatasetManifest& m) {
  std::vector<Prediction> out;
  for (const auto& s : m.samples()) {
    Prediction p;
    p.sample_id = s.id;
    p.model_id = "vlm";
    p.prediction = s.answer_text;
    out.push_back(p);
  }
  return out;
}

// A run with manifest, predictions and metrics whose corpus BLEU is forced to `bleu`.
void make_run(const fs::path& runs, const std::string& id, const DatasetManifest& m, double bleu) {
  create_run(runs, id);
  const auto preds = echo_predictions(m);
  record_artifact(runs, id, Artifact::Manifest, serialize_manifest(m));
  std::string lines;
  for (const auto& p : preds) lines += prediction_to_record(p).dump() + "\n";
  record_artifact(runs, id, Artifact::Predictions, lines);
  auto report = score_run(m, preds);
  report.bleu = bleu;
  record_artifact(runs, id, Artifact::Metrics, serialize_metrics({report}));
}

Errc error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::BadRequest;
}

}  // namespace

TEST_SUITE("reporting") {

TEST_CASE("bundle round trip and index") {
  testing::TempDir runs;
  const auto m = demo_manifest(5);
  make_run(runs.path(), "r1", m, 0.5);
  make_run(runs.path(), "r2", m, 0.5);
  CHECK(list_runs(runs.path()) == std::vector<std::string>{"r1", "r2"});
  const auto b = load_bundle(runs.path(), "r1");
  CHECK(b.has(Artifact::Manifest));
  CHECK_FALSE(b.has(Artifact::Asr));
  REQUIRE(b.manifest);
  CHECK(b.manifest->samples() == m.samples());
  CHECK(b.predictions.size() == 5);
  REQUIRE(b.metrics.size() == 1);
  CHECK(*b.metrics[0].bleu == 0.5);
  CHECK(b.refs.at("manifest").sha256 == sha256_file(runs / "r1/manifest.jsonl"));
}

TEST_CASE("report rendering is a pure function of the bundle") {
  testing::TempDir runs;
  make_run(runs.path(), "a", demo_manifest(5), 0.5);
  make_run(runs.path(), "b", demo_manifest(5), 0.5);
  for (auto f : {ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Machine}) {
    const std::string once = render_report(load_bundle(runs.path(), "a"), f);
    CHECK(once == render_report(load_bundle(runs.path(), "a"), f));
    CHECK(once == render_report(load_bundle(runs.path(), "b"), f));
    CHECK(once.find("\"a\"") == std::string::npos);
  }
}

TEST_CASE("missing artifacts render as gaps") {
  testing::TempDir runs;
  make_run(runs.path(), "r", demo_manifest(5), 0.5);
  const auto tables = build_report_tables(load_bundle(runs.path(), "r"));
  REQUIRE(tables.size() == std::size(kReportTableIds));
  for (std::size_t i = 0; i < tables.size(); ++i) CHECK(tables[i].id == kReportTableIds[i]);
  CHECK(tables[0].gap.has_value());   // asr
  CHECK_FALSE(tables[1].gap.has_value());
  const std::string md = render_report(load_bundle(runs.path(), "r"), ReportFormat::Markdown);
  CHECK(md.find("_Not available") != std::string::npos);
  CHECK(render_report(load_bundle(runs.path(), "r"), ReportFormat::Csv).rfind("table,row,column,value\n", 0) == 0);
}

TEST_CASE("tampered artifacts are detected") {
  testing::TempDir runs;
  make_run(runs.path(), "r", demo_manifest(5), 0.5);
  std::ofstream(runs / "r/predictions.jsonl", std::ios::app) << "\n";
  CHECK(error_code([&] { load_bundle(runs.path(), "r"); }) == Errc::BrokenRef);
  fs::remove(runs / "r/predictions.jsonl");
  CHECK(error_code([&] { load_bundle(runs.path(), "r"); }) == Errc::BrokenRef);
}

TEST_CASE("refresh after an in-place append keeps the bundle valid") {
  testing::TempDir runs;
  make_run(runs.path(), "r", demo_manifest(5), 0.5);
  std::ofstream(runs / "r/predictions.jsonl", std::ios::app) << "\n";
  refresh_artifact(runs.path(), "r", Artifact::Predictions);
  CHECK_NOTHROW(load_bundle(runs.path(), "r"));
}

TEST_CASE("diff reports a known score shift") {
  testing::TempDir runs;
  make_run(runs.path(), "a", demo_manifest(5), 0.50);
  make_run(runs.path(), "b", demo_manifest(5), 0.55);
  const auto deltas = diff_runs(load_bundle(runs.path(), "a"), load_bundle(runs.path(), "b"));
  const auto it = std::find_if(deltas.begin(), deltas.end(),
                               [](const MetricDelta& d) { return d.key == "metrics/vlm@speech/bleu"; });
  REQUIRE(it != deltas.end());
  CHECK(it->delta == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(deltas_to_text(deltas).find("+0.0500") != std::string::npos);
  CHECK(deltas_to_json(deltas).is_array());
}

TEST_CASE("diff refuses runs over different manifests") {
  testing::TempDir runs;
  make_run(runs.path(), "a", demo_manifest(5), 0.5);
  make_run(runs.path(), "b", demo_manifest(6), 0.5);
  CHECK(error_code([&] { diff_runs(load_bundle(runs.path(), "a"), load_bundle(runs.path(), "b")); }) ==
        Errc::ManifestMismatch);
}

TEST_CASE("run ids cannot escape the runs directory") {
  CHECK_THROWS_AS(run_directory("runs", "../x"), Error);
  CHECK_THROWS_AS(run_directory("runs", ""), Error);
  CHECK(run_directory("runs", "r-1_a") == fs::path("runs") / "r-1_a");
}

TEST_CASE("agreement serialization keeps degenerate results") {
  AgreementResult a;
  a.rater_a = "x";
  a.rater_b = "y";
  a.n = 3;
  a.pearson_r = Correlation::of(0.5);
  a.spearman_rho = Correlation::degenerate("constant");
  testing::TempDir dir;
  std::ofstream(dir / "agreement.jsonl") << serialize_agreement({a});
  const auto back = parse_agreement(dir / "agreement.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].pearson_r.value() == 0.5);
  CHECK(back[0].spearman_rho.is_degenerate());
}

}  // TEST_SUITE
