#include "medvqa/predictions.hpp"

#include <map>
#include <tuple>

#include "medvqa/error.hpp"

namespace medvqa {

namespace {
constexpr const char* kModule = "predictions";
}

std::string_view to_string(InputMode m) { return m == InputMode::Speech ? "speech" : "text"; }

std::optional<InputMode> parse_input_mode(std::string_view s) {
  const std::string l = to_lower(trim(s));
  if (l == "speech") return InputMode::Speech;
  if (l == "text") return InputMode::Text;
  return std::nullopt;
}

json prediction_to_record(const Prediction& p) {
  json rec = {{"sample_id", p.sample_id},
              {"model_id", p.model_id},
              {"input_mode", to_string(p.input_mode)},
              {"prediction", p.prediction},
              {"latency_ms", p.latency_ms}};
  if (p.prediction.empty()) rec["empty"] = true;
  return rec;
}

Prediction prediction_from_record(const json& rec, std::size_t line) {
  const std::string where = line ? "line " + std::to_string(line) + ": " : std::string();
  auto str = [&](const char* field) {
    if (!rec.contains(field)) {
      throw Error(Errc::MissingField, kModule, where + "missing field \"" + field + "\"", line);
    }
    if (!rec.at(field).is_string()) {
      throw Error(Errc::MalformedRecord, kModule, where + "field \"" + field + "\" must be a string", line);
    }
    return rec.at(field).get<std::string>();
  };
  Prediction p;
  p.sample_id = str("sample_id");
  p.model_id = str("model_id");
  const std::string mode = str("input_mode");
  auto m = parse_input_mode(mode);
  if (!m) throw Error(Errc::UnknownEnum, kModule, where + "unknown input_mode \"" + mode + "\"", line);
  p.input_mode = *m;
  p.prediction = str("prediction");
  if (rec.contains("latency_ms")) {
    if (!rec.at("latency_ms").is_number_integer() || rec.at("latency_ms").get<std::int64_t>() < 0) {
      throw Error(Errc::MalformedRecord, kModule, where + "latency_ms must be a non-negative integer", line);
    }
    p.latency_ms = rec.at("latency_ms").get<std::int64_t>();
  }
  return p;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  std::map<std::tuple<std::string, std::string, InputMode>, std::size_t> slot;
  for (const auto& [line, rec] : read_jsonl(path, kModule, /*tolerate_torn_tail=*/true)) {
    Prediction p = prediction_from_record(rec, line);
    auto key = std::make_tuple(p.sample_id, p.model_id, p.input_mode);
    auto it = slot.find(key);
    if (it != slot.end()) {
      out[it->second] = std::move(p);
    } else {
      slot.emplace(std::move(key), out.size());
      out.push_back(std::move(p));
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::string content;
  for (const auto& p : predictions) {
    content += prediction_to_record(p).dump();
    content.push_back('\n');
  }
  write_file_atomic(path, content);
}

}  // namespace medvqa
