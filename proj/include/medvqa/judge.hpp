#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/dataset.hpp"
#include "medvqa/error.hpp"
#include "medvqa/net.hpp"
#include "medvqa/predictions.hpp"
#include "medvqa/stats.hpp"

namespace medvqa {

// ---- rubric ---------------------------------------------------------------

enum class RubricLevel : int {
  CompletelyIncorrect = 0,
  SignificantlyIncorrect = 1,
  PartiallyCorrect = 2,
  FullyCorrect = 3,
};

inline constexpr std::array<RubricLevel, 4> kRubricLevels = {
    RubricLevel::CompletelyIncorrect, RubricLevel::SignificantlyIncorrect, RubricLevel::PartiallyCorrect,
    RubricLevel::FullyCorrect};

int level_value(RubricLevel l);
std::optional<RubricLevel> level_from_value(long long v);
/// "Completely Incorrect", ..., "Fully Correct"
std::string_view level_label(RubricLevel l);
/// Enum-style name: COMPLETELY_INCORRECT, ...
std::string_view level_name(RubricLevel l);
/// Rubric definition text embedded verbatim in reasoning prompts.
std::string_view level_definition(RubricLevel l);

/// The two answer-structure criteria embedded verbatim in structure prompts.
inline constexpr std::array<std::string_view, 2> kStructureCriteria = {
    "The first sentence directly answers the question.",
    "The subsequent sentences provide reasoning, explaining the signs of abnormality.",
};

enum class VerdictKind { Structure, Reasoning };
std::string_view to_string(VerdictKind k);  // "structure" | "reasoning"
std::optional<VerdictKind> parse_verdict_kind(std::string_view s);

// ---- verdicts -------------------------------------------------------------

/// One rating of one prediction by one rater in one round. A structure
/// verdict carries structure_ok; a reasoning verdict carries level.
struct JudgeVerdict {
  std::string sample_id;
  std::string rater_id;
  int round = 1;
  VerdictKind kind = VerdictKind::Reasoning;
  std::optional<bool> structure_ok;
  std::optional<RubricLevel> level;
  std::string rationale;
  std::string model_id;  // optional, the judged model

  bool operator==(const JudgeVerdict&) const = default;
};

/// Validates invariants (round >= 1, non-empty ids, field matching kind).
/// Throws BAD_REQUEST or OUT_OF_RANGE_LEVEL with module "judge".
JudgeVerdict verdict_from_record(const json& rec, std::size_t line = 0);
json verdict_to_record(const JudgeVerdict& v);

/// Reads a verdicts file; a torn final line is ignored and a later record
/// for the same (sample, rater, round, kind) replaces the earlier one.
/// Result order: raters as first seen, then sample id, kind and round.
std::vector<JudgeVerdict> load_verdicts(const std::filesystem::path& path);
void write_verdicts(const std::filesystem::path& path, const std::vector<JudgeVerdict>& verdicts);

// ---- prompts --------------------------------------------------------------

/// Editable prompt templates. Placeholders: {{question}}, {{ground_truth}},
/// {{prediction}} (each inserted as an escaped JSON string literal),
/// {{rubric}} and {{criteria}}.
struct PromptTemplates {
  std::string system;
  std::string reasoning;
  std::string structure;

  static PromptTemplates defaults();
  /// Reads system.txt, reasoning.txt and structure.txt from `dir`; missing
  /// files keep the default.
  static PromptTemplates load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

std::string rubric_block();
std::string structure_criteria_block();

std::string build_reasoning_prompt(const Sample& sample, const Prediction& prediction,
                                   const PromptTemplates& templates = PromptTemplates::defaults());
std::string build_structure_prompt(const Sample& sample, const Prediction& prediction,
                                   const PromptTemplates& templates = PromptTemplates::defaults());

// ---- reply parsing --------------------------------------------------------

struct PartialVerdict {
  VerdictKind kind = VerdictKind::Reasoning;
  std::optional<bool> structure_ok;
  std::optional<RubricLevel> level;
  std::string rationale;

  bool operator==(const PartialVerdict&) const = default;
};

/// Extracts the machine-readable block from a judge reply. Accepts a JSON
/// object ({"level": 2, "rationale": "..."} or {"structure": "pass", ...})
/// anywhere in the text, or "level: N" / "structure: pass|fail" lines.
/// Throws UNPARSEABLE or OUT_OF_RANGE_LEVEL.
PartialVerdict parse_verdict(std::string_view raw, VerdictKind kind);

/// Canonical reply text for a verdict; parse_verdict inverts it.
std::string render_verdict(const PartialVerdict& v);

// ---- endpoint -------------------------------------------------------------

/// Chat endpoint contract: POST <base_url>/chat/completions with
/// {"model", "temperature", "messages": [system, user]}; the reply text is
/// choices[0].message.content.
struct JudgeClientConfig {
  std::string base_url;
  std::string model_name;
  std::string rater_id;  // defaults to model_name
  std::string api_key_env;
  double temperature = 0.0;
  int max_retries = 3;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds backoff{500};
  std::size_t max_in_flight = 4;

  std::string effective_rater() const { return rater_id.empty() ? model_name : rater_id; }
  json to_json() const;
  static JudgeClientConfig from_json(const json& j);
  void validate() const;
};

class ChatClient {
 public:
  explicit ChatClient(JudgeClientConfig cfg);

  /// One request. Throws RetryableFailure on transport errors and
  /// retryable statuses, ENDPOINT_UNAVAILABLE on other failures.
  std::string complete(const std::string& system, const std::string& user);
  std::size_t requests_issued() const { return requests_.load(); }

 private:
  JudgeClientConfig cfg_;
  HttpClient http_;
  std::atomic<std::size_t> requests_{0};
};

// ---- runs -----------------------------------------------------------------

struct JudgeRunOptions {
  int rounds = 3;
  bool judge_structure = true;
  bool judge_reasoning = true;
  PromptTemplates templates = PromptTemplates::defaults();
  /// Append-only verdict store; existing verdicts are reused (resume).
  std::optional<std::filesystem::path> verdicts_path;
};

struct JudgeRunResult {
  std::vector<JudgeVerdict> verdicts;  // existing + new for this rater
  BatchReport report;                  // one item per (sample, kind)
  std::size_t reasoning_calls = 0;
  std::size_t structure_calls = 0;
};

/// Judges every sample that has a prediction. Rounds for one sample are
/// sequential; samples run in parallel up to cfg.max_in_flight. Each
/// verdict's attempts (transport errors and unparseable replies alike) share
/// a budget of 1 + max_retries requests.
JudgeRunResult judge_run(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                         const JudgeClientConfig& cfg, const JudgeRunOptions& options = {});

// ---- aggregation ----------------------------------------------------------

struct SampleRubric {
  std::string sample_id;
  std::vector<int> levels;  // by round
  double mean_level = 0;
  RubricLevel bucket = RubricLevel::CompletelyIncorrect;
  std::vector<bool> structure;  // by round
  std::optional<bool> structure_pass;
};

struct RubricAggregate {
  std::string rater_id;
  std::size_t judged = 0;                    // samples with reasoning verdicts
  std::array<std::size_t, 4> bucket_counts{};  // per-sample mean, rounded half up
  std::array<double, 4> mean_counts{};       // average over rounds of per-round counts
  double mean_level = 0;
  std::size_t structure_total = 0;
  std::size_t structure_passes = 0;          // per-sample majority, rounded half up
  double structure_mean_passes = 0;          // average over rounds
  std::vector<SampleRubric> per_sample;

  json to_json() const;
  static RubricAggregate from_json(const json& j);
};

/// Round-half-up bucket of a mean level in [0, 3].
RubricLevel bucket_for_mean(double mean_level);

RubricAggregate aggregate_rubric(const std::vector<JudgeVerdict>& verdicts, const std::string& rater_id);

/// Distinct rater ids in first-seen order.
std::vector<std::string> raters_in(const std::vector<JudgeVerdict>& verdicts);

/// Per-rater vectors of per-sample mean reasoning level.
std::vector<ScoreVector> reasoning_score_vectors(const std::vector<JudgeVerdict>& verdicts);

}  // namespace medvqa
