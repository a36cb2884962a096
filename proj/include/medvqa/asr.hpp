#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/util.hpp"

namespace medvqa {

struct TranscriptPair {
  std::string id;
  std::string reference;
  std::string hypothesis;
};

struct EditCounts {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  bool operator==(const EditCounts&) const = default;
};

/// Minimal unit-cost Levenshtein alignment. Among equal-cost alignments the
/// backtrace prefers match/substitution, then deletion, then insertion.
EditCounts edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct AsrTokenization {
  bool lowercase = true;
  bool strip_punctuation = true;
};

/// Words: optional lowercasing, whitespace split, leading/trailing ASCII
/// punctuation removed per token, empty tokens dropped.
std::vector<std::string> word_units(std::string_view text, const AsrTokenization& tok = {});

/// UTF-8 code points of the word units joined by single spaces.
std::vector<std::string> char_units(std::string_view text, const AsrTokenization& tok = {});

double wer(const TranscriptPair& pair, const AsrTokenization& tok = {});
double cer(const TranscriptPair& pair, const AsrTokenization& tok = {});

struct PairErrorRates {
  std::string id;
  EditCounts words;
  std::size_t ref_words = 0;
  EditCounts chars;
  std::size_t ref_chars = 0;
  double wer = 0;
  double cer = 0;
};

struct ErrorRateReport {
  // pooled: sum of distances over sum of reference lengths
  double wer = 0;
  double cer = 0;
  // mean of per-pair rates, reported alongside
  double mean_wer = 0;
  double mean_cer = 0;
  EditCounts word_totals;
  std::size_t ref_words = 0;
  EditCounts char_totals;
  std::size_t ref_chars = 0;
  std::vector<PairErrorRates> pairs;

  json to_json() const;
  static ErrorRateReport from_json(const json& j);
};

ErrorRateReport corpus_error_rates(const std::vector<TranscriptPair>& pairs, const AsrTokenization& tok = {});

std::vector<TranscriptPair> load_transcript_pairs(const std::filesystem::path& path);

}  // namespace medvqa
