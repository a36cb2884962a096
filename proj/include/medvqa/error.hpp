#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medvqa {

/// Stable error codes. The string form is part of the CLI and REST contract.
enum class Errc {
  // dataset
  MalformedRecord,
  DuplicateId,
  MissingField,
  UnknownEnum,
  InvalidSample,
  MissingImage,
  // clients
  ProviderUnavailable,
  BadAudio,
  IoError,
  ServiceUnavailable,
  DimensionMismatch,
  EndpointUnavailable,
  MissingAudio,
  // asr / metrics
  EmptyReference,
  OrphanPrediction,
  MissingPrediction,
  // judge
  Unparseable,
  OutOfRangeLevel,
  IncompleteCoverage,
  // stats
  Degenerate,
  // reporting
  BrokenRef,
  ManifestMismatch,
  // cli / serve
  ConfigError,
  NotFound,
  BadRequest,
  DuplicateVerdict,
};

std::string_view to_string(Errc code);

/// Exception carrying a stable code, the module that raised it and optional
/// location (line number or subject id).
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string module, const std::string& message,
        std::optional<std::size_t> line = std::nullopt,
        std::string subject = {});

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  const std::string& subject() const noexcept { return subject_; }

  /// "<module>.<CODE>", e.g. "dataset.UNKNOWN_ENUM".
  std::string qualified_code() const;

 private:
  Errc code_;
  std::string module_;
  std::optional<std::size_t> line_;
  std::string subject_;
};

/// One failed item inside a batch operation.
struct ItemFailure {
  std::string id;
  Errc code;
  std::string message;
};

/// Outcome of a batch run over many items (synthesis, inference, judging).
struct BatchReport {
  std::size_t total = 0;
  std::size_t succeeded = 0;
  std::size_t skipped = 0;  // already present from an earlier run
  std::size_t requests = 0;
  std::vector<ItemFailure> failures;

  bool complete() const { return failures.empty() && succeeded + skipped == total; }
  double coverage() const {
    return total == 0 ? 1.0 : static_cast<double>(succeeded + skipped) / static_cast<double>(total);
  }
};

}  // namespace medvqa
