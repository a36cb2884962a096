#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/util.hpp"

namespace medvqa {

enum class InputMode { Speech, Text };

std::string_view to_string(InputMode m);  // "speech" | "text"
std::optional<InputMode> parse_input_mode(std::string_view s);

struct Prediction {
  std::string sample_id;
  std::string model_id;
  InputMode input_mode = InputMode::Speech;
  std::string prediction;  // may be empty; written with "empty": true
  std::int64_t latency_ms = 0;

  bool operator==(const Prediction&) const = default;
};

json prediction_to_record(const Prediction& p);
Prediction prediction_from_record(const json& rec, std::size_t line = 0);

/// Reads a predictions file. A torn final line (interrupted append) is
/// ignored. A later record for the same (sample, model, mode) replaces the
/// earlier one.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

}  // namespace medvqa
