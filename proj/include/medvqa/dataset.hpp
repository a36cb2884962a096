#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medvqa/util.hpp"

namespace medvqa {

enum class Modality { Mri, Ct, Xray };
enum class Split { Train, Test };
enum class QuestionType { Open, Closed };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
std::string_view to_string(QuestionType q);
std::optional<Modality> parse_modality(std::string_view s);
std::optional<Split> parse_split(std::string_view s);
std::optional<QuestionType> parse_question_type(std::string_view s);

inline constexpr Modality kAllModalities[] = {Modality::Mri, Modality::Ct, Modality::Xray};
inline constexpr Split kAllSplits[] = {Split::Train, Split::Test};

struct Sample {
  std::string id;
  std::string image_path;
  Modality modality = Modality::Xray;
  std::string organ;
  std::string question_text;
  std::string normalized_question_text;
  std::string answer_text;
  Split split = Split::Test;
  QuestionType question_type = QuestionType::Open;
  std::optional<std::string> audio_ref;
  /// Unknown record fields, carried through load/serialize unchanged.
  json extra = json::object();

  bool operator==(const Sample&) const = default;
};

/// Number of '.', '!' and '?' characters in `text`.
std::size_t count_sentence_terminators(std::string_view text);

struct ManifestCounts {
  std::size_t total = 0;
  std::map<Modality, std::size_t> by_modality;
  std::map<Split, std::size_t> by_split;
  std::map<std::pair<Split, Modality>, std::size_t> by_split_modality;

  bool operator==(const ManifestCounts&) const = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::string name, std::vector<Sample> samples);

  const std::string& name() const { return name_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const ManifestCounts& counts() const { return counts_; }
  std::size_t size() const { return samples_.size(); }

  const Sample* find(std::string_view id) const;

  bool operator==(const DatasetManifest& other) const {
    return name_ == other.name_ && samples_ == other.samples_;
  }

 private:
  std::string name_;
  std::vector<Sample> samples_;
  std::map<std::string, std::size_t, std::less<>> index_;
  ManifestCounts counts_;
};

// ---- normalization --------------------------------------------------------

enum class NumberStyle { SpellOut, KeepDigits };

/// Rules applied to question text before speech synthesis. Abbreviation keys
/// are single alphanumeric words matched case-insensitively on word
/// boundaries. Construction validates the rules and rejects sets whose
/// application would not be idempotent.
class NormalizationRuleSet {
 public:
  NormalizationRuleSet() = default;
  NormalizationRuleSet(std::vector<std::pair<std::string, std::string>> abbreviations,
                       NumberStyle number_style, bool strip_markup);

  const std::vector<std::pair<std::string, std::string>>& abbreviations() const {
    return abbreviations_;
  }
  NumberStyle number_style() const { return number_style_; }
  bool strip_markup() const { return strip_markup_; }

  static NormalizationRuleSet from_json(const json& j);
  json to_json() const;

 private:
  std::vector<std::pair<std::string, std::string>> abbreviations_;
  NumberStyle number_style_ = NumberStyle::KeepDigits;
  bool strip_markup_ = true;
};

std::string normalize_question(std::string_view text, const NormalizationRuleSet& rules);

/// English words for a non-negative integer ("21" -> "twenty one").
std::string spell_number(unsigned long long n);

/// Override wins. Otherwise yes/no questions (leading auxiliary verb) and
/// questions offering enumerated options ("X or Y") are CLOSED; the rest OPEN.
QuestionType classify_question(std::string_view text,
                               std::optional<QuestionType> override_type = std::nullopt);

// ---- loading --------------------------------------------------------------

struct LoadOptions {
  bool strict = false;
  /// Root that image paths must resolve under in strict mode.
  std::filesystem::path dataset_root;
  NormalizationRuleSet rules;
  /// Enforce the two-sentence answer structure on OPEN questions.
  bool require_answer_structure = true;
};

DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});
DatasetManifest parse_manifest(std::string_view content, std::string name,
                               const LoadOptions& options = {});

json sample_to_record(const Sample& s);
std::string serialize_manifest(const DatasetManifest& m);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// ---- selection ------------------------------------------------------------

struct SampleFilter {
  std::optional<Split> split;
  std::optional<Modality> modality;
  std::optional<std::string> organ;
  std::optional<QuestionType> question_type;

  bool matches(const Sample& s) const;
  static SampleFilter from_json(const json& j);
  std::string describe() const;
};

std::vector<Sample> filter_samples(const DatasetManifest& m, const SampleFilter& filter);
std::vector<Sample> filter_samples(const DatasetManifest& m,
                                   const std::function<bool(const Sample&)>& predicate);

// ---- count validation -----------------------------------------------------

/// One declared tally. `count` checks the number of matching samples;
/// `percent` checks their share of the whole manifest (one decimal place).
struct CountExpectation {
  std::string label;
  SampleFilter filter;
  std::optional<std::size_t> count;
  std::optional<double> percent;
};

using CountSpec = std::vector<CountExpectation>;

CountSpec load_count_spec(const std::filesystem::path& path);
CountSpec parse_count_spec(std::string_view content);

inline constexpr double kPercentTolerance = 0.1;

struct CountCheck {
  std::string label;
  enum class Kind { Count, Percent } kind = Kind::Count;
  double expected = 0;
  double actual = 0;
  double delta = 0;  // actual - expected
  bool pass = false;
};

struct CountReport {
  std::vector<CountCheck> checks;
  bool all_pass() const;
  json to_json() const;
  std::string to_text() const;
};

CountReport validate_counts(const DatasetManifest& m, const CountSpec& expected);

}  // namespace medvqa
