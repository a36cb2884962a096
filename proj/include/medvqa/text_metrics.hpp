#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/dataset.hpp"
#include "medvqa/net.hpp"
#include "medvqa/predictions.hpp"

namespace medvqa {

using Tokens = std::vector<std::string>;

/// Lowercase, punctuation treated as a separator, whitespace split.
Tokens metric_tokens(std::string_view text);

// ---- BLEU -----------------------------------------------------------------

enum class BleuSmoothing { None, AddOnePositiveN };

/// Clipped n-gram statistics of one hypothesis against its references.
struct BleuStats {
  std::vector<std::size_t> matches;  // index n-1
  std::vector<std::size_t> totals;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;  // closest reference length, shorter on ties

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(const std::vector<Tokens>& references, const Tokens& hypothesis, int max_n = 4);

/// Geometric mean of the modified precisions times the brevity penalty
/// exp(1 - r/c) when c < r. Zero when the hypothesis is empty, or when any
/// precision is zero without smoothing. Add-one smoothing applies to n > 1.
double bleu_from_stats(const BleuStats& stats, int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::None);

double bleu(const std::vector<Tokens>& references, const Tokens& hypothesis, int max_n = 4,
            BleuSmoothing smoothing = BleuSmoothing::None);

// ---- ROUGE ----------------------------------------------------------------

struct RougeScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

std::size_t lcs_length(const Tokens& a, const Tokens& b);
RougeScore rouge_l(const Tokens& reference, const Tokens& hypothesis);
/// Unigram overlap with clipped counts.
RougeScore rouge_1(const Tokens& reference, const Tokens& hypothesis);

// ---- accuracy -------------------------------------------------------------

/// Lowercase, punctuation removed, whitespace collapsed.
std::string normalize_answer(std::string_view text);

/// Exact match after normalization, or the prediction's first sentence
/// carries the answer: for yes/no the polarity word without its opposite,
/// otherwise the answer as a contiguous phrase.
bool closed_accuracy(std::string_view prediction, std::string_view answer);

/// Share of the answer's unique content tokens (stopwords removed) that occur
/// in the prediction.
double open_accuracy(std::string_view prediction, std::string_view answer);

/// The short answer used for closed scoring: an explicit "short_answer"
/// field, else a leading "yes"/"no" of the reference, else the reference.
std::string closed_answer_key(const Sample& sample);

// ---- semantic similarity --------------------------------------------------

/// Embedding service contract: POST <base_url>/embeddings with JSON
/// {"model", "input": [texts], "dimensions"}; reply {"data": [{"index", "embedding"}]}.
struct EmbeddingServiceConfig {
  std::string base_url;
  std::string model_name = "text-embedding";
  std::size_t dimension = 768;
  std::string api_key_env;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
  std::size_t batch_size = 32;

  json to_json() const;
  static EmbeddingServiceConfig from_json(const json& j);
  void validate() const;
};

/// Embedding client with a per-text cache keyed by content hash.
class EmbeddingClient {
 public:
  explicit EmbeddingClient(EmbeddingServiceConfig cfg);

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);
  std::size_t requests_issued() const { return requests_.load(); }
  const EmbeddingServiceConfig& config() const { return cfg_; }

 private:
  std::vector<std::vector<double>> fetch(const std::vector<std::string>& texts);

  EmbeddingServiceConfig cfg_;
  HttpClient http_;
  std::atomic<std::size_t> requests_{0};
  std::mutex mu_;
  std::map<std::string, std::vector<double>> cache_;
};

/// Cosine of the two vectors; 0 when either has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

double semantic_similarity(std::string_view prediction, std::string_view answer, EmbeddingClient& client);

// ---- run scoring ----------------------------------------------------------

struct ScoredPrediction {
  std::string sample_id;
  QuestionType question_type = QuestionType::Open;
  double bleu = 0;  // sentence-level, smoothed per ScoreOptions
  BleuStats bleu_stats;
  RougeScore rouge_l;
  RougeScore rouge_1;
  std::optional<bool> accuracy_hit;       // closed questions
  std::optional<double> open_accuracy;    // open questions
  std::optional<double> semantic_similarity;
};

struct ScoreOptions {
  int max_n = 4;
  BleuSmoothing corpus_smoothing = BleuSmoothing::None;
  BleuSmoothing sentence_smoothing = BleuSmoothing::AddOnePositiveN;
  bool rouge_1 = false;
  EmbeddingClient* embeddings = nullptr;  // semantic similarity skipped when null
};

struct MetricReport {
  std::string model_id;
  InputMode input_mode = InputMode::Speech;
  std::size_t samples_total = 0;
  std::size_t scored = 0;
  std::vector<std::string> missing;  // MISSING_PREDICTION coverage gap

  std::optional<double> bleu;                // corpus BLEU in [0,1]
  std::optional<double> sentence_bleu_mean;
  std::optional<double> rouge_l;             // mean F1
  std::optional<double> rouge_1;             // mean F1 when enabled
  std::optional<double> closed_accuracy;     // percent
  std::size_t closed_count = 0;
  std::optional<double> open_accuracy;       // percent
  std::size_t open_count = 0;
  std::optional<double> overall_accuracy;    // percent over closed hits and open scores
  std::optional<double> semantic_similarity; // mean cosine

  int max_n = 4;
  BleuSmoothing corpus_smoothing = BleuSmoothing::None;
  std::vector<ScoredPrediction> per_sample;

  json to_json() const;
  static MetricReport from_json(const json& j);
};

/// Recomputes every aggregate of `r` from its per-sample table.
MetricReport aggregate_metric_report(MetricReport r);

/// Scores one model's predictions (single model id and input mode) against
/// the manifest samples. Throws ORPHAN_PREDICTION listing every unknown id.
MetricReport score_run(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                       const ScoreOptions& options = {});

/// Groups predictions by (model, input mode) and scores each group.
std::vector<MetricReport> score_runs(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                                     const ScoreOptions& options = {});

}  // namespace medvqa
