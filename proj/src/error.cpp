#include "medvqa/error.hpp"

#include <utility>

namespace medvqa {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::MalformedRecord: return "MALFORMED_RECORD";
    case Errc::DuplicateId: return "DUPLICATE_ID";
    case Errc::MissingField: return "MISSING_FIELD";
    case Errc::UnknownEnum: return "UNKNOWN_ENUM";
    case Errc::InvalidSample: return "INVALID_SAMPLE";
    case Errc::MissingImage: return "MISSING_IMAGE";
    case Errc::ProviderUnavailable: return "PROVIDER_UNAVAILABLE";
    case Errc::BadAudio: return "BAD_AUDIO";
    case Errc::IoError: return "IO_ERROR";
    case Errc::ServiceUnavailable: return "SERVICE_UNAVAILABLE";
    case Errc::DimensionMismatch: return "DIMENSION_MISMATCH";
    case Errc::EndpointUnavailable: return "ENDPOINT_UNAVAILABLE";
    case Errc::MissingAudio: return "MISSING_AUDIO";
    case Errc::EmptyReference: return "EMPTY_REFERENCE";
    case Errc::OrphanPrediction: return "ORPHAN_PREDICTION";
    case Errc::MissingPrediction: return "MISSING_PREDICTION";
    case Errc::Unparseable: return "UNPARSEABLE";
    case Errc::OutOfRangeLevel: return "OUT_OF_RANGE_LEVEL";
    case Errc::IncompleteCoverage: return "INCOMPLETE_COVERAGE";
    case Errc::Degenerate: return "DEGENERATE";
    case Errc::BrokenRef: return "BROKEN_REF";
    case Errc::ManifestMismatch: return "MANIFEST_MISMATCH";
    case Errc::ConfigError: return "CONFIG_ERROR";
    case Errc::NotFound: return "NOT_FOUND";
    case Errc::BadRequest: return "BAD_REQUEST";
    case Errc::DuplicateVerdict: return "DUPLICATE_VERDICT";
  }
  return "UNKNOWN";
}

Error::Error(Errc code, std::string module, const std::string& message,
             std::optional<std::size_t> line, std::string subject)
    : std::runtime_error(message),
      code_(code),
      module_(std::move(module)),
      line_(line),
      subject_(std::move(subject)) {}

std::string Error::qualified_code() const {
  return module_ + "." + std::string(to_string(code_));
}

}  // namespace medvqa
