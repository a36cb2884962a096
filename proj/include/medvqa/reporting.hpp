#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medvqa/asr.hpp"
#include "medvqa/dataset.hpp"
#include "medvqa/judge.hpp"
#include "medvqa/predictions.hpp"
#include "medvqa/stats.hpp"
#include "medvqa/text_metrics.hpp"

namespace medvqa {

// ---- run bundles ----------------------------------------------------------

/// Artifact roles and their file names inside runs/<run_id>/.
enum class Artifact { Manifest, Predictions, Verdicts, Metrics, Rubric, Asr, Agreement };

inline constexpr Artifact kAllArtifacts[] = {Artifact::Manifest, Artifact::Predictions, Artifact::Verdicts,
                                             Artifact::Metrics,  Artifact::Rubric,      Artifact::Asr,
                                             Artifact::Agreement};

std::string_view artifact_role(Artifact a);  // "manifest", "predictions", ...
std::string_view artifact_file(Artifact a);  // "manifest.jsonl", ...

struct ArtifactRef {
  std::string file;  // relative to the run directory
  std::string sha256;
};

/// Contents of runs/<run_id>/bundle.json plus the parsed artifacts.
struct RunBundle {
  std::string run_id;
  std::map<std::string, ArtifactRef> refs;  // keyed by role
  json config = json::object();
  std::string created_at;
  std::string updated_at;

  std::optional<DatasetManifest> manifest;
  std::vector<Prediction> predictions;
  std::vector<JudgeVerdict> verdicts;
  std::vector<MetricReport> metrics;
  std::vector<RubricAggregate> rubric;
  std::optional<ErrorRateReport> asr;
  std::vector<AgreementResult> agreement;

  bool has(Artifact a) const { return refs.count(std::string(artifact_role(a))) > 0; }
};

std::filesystem::path run_directory(const std::filesystem::path& runs_dir, const std::string& run_id);

/// Creates runs/<run_id>/ with an empty bundle.json and appends an index
/// record to runs/index.jsonl. Existing runs are left untouched.
void create_run(const std::filesystem::path& runs_dir, const std::string& run_id, const json& config = json::object());

/// Writes an artifact file atomically and records its digest in bundle.json.
void record_artifact(const std::filesystem::path& runs_dir, const std::string& run_id, Artifact role,
                     const std::string& content);

/// Re-digests an artifact that was modified in place (e.g. appended).
void refresh_artifact(const std::filesystem::path& runs_dir, const std::string& run_id, Artifact role);

void set_run_config(const std::filesystem::path& runs_dir, const std::string& run_id, const json& config);

/// Loads bundle.json and every referenced artifact. Throws BROKEN_REF when
/// a referenced file is missing or its digest differs.
RunBundle load_bundle(const std::filesystem::path& runs_dir, const std::string& run_id);

/// Run ids from runs/index.jsonl in creation order.
std::vector<std::string> list_runs(const std::filesystem::path& runs_dir);

// Artifact serializers shared by the CLI and the run store.
std::string serialize_metrics(const std::vector<MetricReport>& metrics);
std::string serialize_rubric(const std::vector<RubricAggregate>& rubric);
std::string serialize_agreement(const std::vector<AgreementResult>& agreement);
std::vector<AgreementResult> parse_agreement(const std::filesystem::path& path);

// ---- rendering ------------------------------------------------------------

enum class ReportFormat { Markdown, Csv, Machine };

std::optional<ReportFormat> parse_report_format(std::string_view s);
std::string_view report_extension(ReportFormat f);  // "md", "csv", "json"

struct TableCell {
  std::string text;  // formatted
  json value;        // number, string or null
};

struct ReportTable {
  std::string id;
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<TableCell>> rows;
  std::optional<std::string> gap;  // why the table is empty
};

/// Table ids in render order.
inline constexpr const char* kReportTableIds[] = {"asr", "text_similarity", "structure", "reasoning_levels",
                                                  "open_closed_accuracy", "accuracy_bleu_similarity", "agreement"};

/// Builds every report table from bundle fields. Rates are shown as
/// percentages with 2 decimals, correlations with 3.
std::vector<ReportTable> build_report_tables(const RunBundle& bundle);

/// Pure function of the bundle: no timestamps, paths or run ids.
std::string render_report(const RunBundle& bundle, ReportFormat format);

// ---- diffs ----------------------------------------------------------------

struct MetricDelta {
  std::string key;  // e.g. "metrics/<model>@<mode>/bleu"
  double a = 0;
  double b = 0;
  double delta = 0;  // b - a
};

/// Signed deltas for every metric present in both runs. Throws
/// MANIFEST_MISMATCH when the manifest digests differ.
std::vector<MetricDelta> diff_runs(const RunBundle& a, const RunBundle& b);

json deltas_to_json(const std::vector<MetricDelta>& deltas);
std::string deltas_to_text(const std::vector<MetricDelta>& deltas);

}  // namespace medvqa
