#include "medvqa/inference.hpp"

#include <map>
#include <mutex>
#include <algorithm>
#include <tuple>

namespace medvqa {

namespace fs = std::filesystem;

namespace {
constexpr const char* kModule = "inference";

std::string content_type_for(const fs::path& p) {
  const std::string ext = to_lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".wav") return "audio/wav";
  return "application/octet-stream";
}
}  // namespace

json InferenceEndpointConfig::to_json() const {
  return {{"base_url", base_url},
          {"model_id", model_id},
          {"input_mode", to_string(input_mode)},
          {"api_key_env", api_key_env},
          {"timeout_ms", timeout.count()},
          {"max_retries", max_retries},
          {"backoff_ms", backoff.count()},
          {"max_in_flight", max_in_flight}};
}

InferenceEndpointConfig InferenceEndpointConfig::from_json(const json& j) {
  InferenceEndpointConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model_id = j.value("model_id", c.model_id);
  if (j.contains("input_mode")) {
    const std::string m = j.at("input_mode").get<std::string>();
    auto mode = parse_input_mode(m);
    if (!mode) throw Error(Errc::ConfigError, kModule, "unknown input_mode \"" + m + "\"");
    c.input_mode = *mode;
  }
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff = std::chrono::milliseconds(j.value("backoff_ms", c.backoff.count()));
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  return c;
}

void InferenceEndpointConfig::validate() const {
  if (model_id.empty()) throw Error(Errc::ConfigError, kModule, "model_id must be set");
  if (timeout.count() <= 0) throw Error(Errc::ConfigError, kModule, "timeout must be positive");
  if (max_retries < 0) throw Error(Errc::ConfigError, kModule, "max_retries must be >= 0");
  if (max_in_flight == 0) throw Error(Errc::ConfigError, kModule, "max_in_flight must be positive");
}

std::string parse_inference_reply(const HttpResponse& res) {
  if (res.content_type.find("json") != std::string::npos) {
    const json j = json::parse(res.body, nullptr, false);
    if (j.is_object() && j.contains("prediction") && j.at("prediction").is_string()) {
      return j.at("prediction").get<std::string>();
    }
    throw RetryableFailure("inference reply lacks a string \"prediction\" field");
  }
  return res.body;
}

InferenceResult run_inference(const DatasetManifest& manifest, const InferenceEndpointConfig& cfg,
                              const fs::path& dataset_root, const fs::path& audio_root, const fs::path& out_path) {
  cfg.validate();
  if (cfg.input_mode == InputMode::Speech) {
    for (const auto& s : manifest.samples()) {
      if (!s.audio_ref || s.audio_ref->empty()) {
        throw Error(Errc::MissingAudio, kModule, "sample " + s.id + " has no audio_ref (speech mode)", std::nullopt,
                    s.id);
      }
    }
  } else {
    for (const auto& s : manifest.samples()) {
      if (s.question_text.empty()) {
        throw Error(Errc::InvalidSample, kModule, "sample " + s.id + " has no question text", std::nullopt, s.id);
      }
    }
  }

  // Existing records: keep everything, reuse ours.
  std::vector<Prediction> existing;
  if (fs::exists(out_path)) existing = load_predictions(out_path);
  std::map<std::string, Prediction> done;
  for (const auto& p : existing) {
    if (p.model_id == cfg.model_id && p.input_mode == cfg.input_mode) done[p.sample_id] = p;
  }

  const auto& samples = manifest.samples();
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!done.count(samples[i].id)) todo.push_back(i);
  }

  InferenceResult result;
  result.report.total = samples.size();
  result.report.skipped = samples.size() - todo.size();

  HttpClient http(cfg.base_url, cfg.timeout);
  const auto headers = auth_headers(cfg.api_key_env);
  const RetryPolicy policy{cfg.max_retries, cfg.backoff, std::chrono::milliseconds(30000)};
  std::mutex mu;
  std::size_t requests = 0;
  std::optional<JsonlAppender> appender;
  if (!todo.empty()) appender.emplace(out_path);

  parallel_for(todo.size(), cfg.max_in_flight, [&](std::size_t k) {
    const Sample& s = samples[todo[k]];
    try {
      std::vector<MultipartPart> parts;
      const fs::path image = dataset_root / s.image_path;
      parts.push_back({"image", read_file(image), image.filename().string(), content_type_for(image)});
      if (cfg.input_mode == InputMode::Speech) {
        const fs::path audio = audio_root / *s.audio_ref;
        std::string bytes;
        try {
          bytes = read_file(audio);
        } catch (const Error&) {
          throw Error(Errc::MissingAudio, kModule, "audio for sample " + s.id + " not found at " + audio.string(),
                      std::nullopt, s.id);
        }
        parts.push_back({"audio", std::move(bytes), audio.filename().string(), "audio/wav"});
      } else {
        parts.push_back({"question", s.question_text, "", "text/plain; charset=utf-8"});
      }
      parts.push_back({"model_id", cfg.model_id, "", "text/plain"});

      const auto start = std::chrono::steady_clock::now();
      std::string text = with_retries(policy, [&]() -> std::string {
        {
          std::lock_guard lock(mu);
          ++requests;
        }
        auto res = http.post_multipart("/infer", parts, headers);
        if (!res) throw RetryableFailure("inference endpoint unreachable");
        if (is_retryable_status(res->status)) {
          throw RetryableFailure("inference endpoint returned HTTP " + std::to_string(res->status));
        }
        if (res->status != 200) {
          throw Error(Errc::EndpointUnavailable, kModule,
                      "inference endpoint rejected sample " + s.id + " with HTTP " + std::to_string(res->status),
                      std::nullopt, s.id);
        }
        return parse_inference_reply(*res);
      });
      const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      Prediction p{s.id, cfg.model_id, cfg.input_mode, std::move(text), std::max<std::int64_t>(0, elapsed.count())};
      std::lock_guard lock(mu);
      appender->append(prediction_to_record(p));
      done[s.id] = std::move(p);
      ++result.report.succeeded;
    } catch (const RetryableFailure& e) {
      std::lock_guard lock(mu);
      result.report.failures.push_back(
          {s.id, Errc::EndpointUnavailable, std::string("retries exhausted: ") + e.what()});
    } catch (const Error& e) {
      std::lock_guard lock(mu);
      result.report.failures.push_back({s.id, e.code(), e.what()});
    }
  });
  result.report.requests = requests;

  // Rewrite in manifest order; records for other models/modes follow unchanged.
  std::vector<Prediction> ordered;
  for (const auto& s : samples) {
    auto it = done.find(s.id);
    if (it != done.end()) {
      ordered.push_back(it->second);
      result.predictions.push_back(it->second);
    }
  }
  for (const auto& p : existing) {
    if (p.model_id != cfg.model_id || p.input_mode != cfg.input_mode) ordered.push_back(p);
  }
  std::sort(result.report.failures.begin(), result.report.failures.end(),
            [&](const ItemFailure& a, const ItemFailure& b) {
              return manifest.find(a.id) < manifest.find(b.id);
            });
  if (!todo.empty() || !fs::exists(out_path)) write_predictions(out_path, ordered);
  return result;
}

}  // namespace medvqa
