#include "medvqa/tts.hpp"

#include <array>

#include "medvqa/wav.hpp"

namespace medvqa {

namespace fs = std::filesystem;

namespace {
constexpr const char* kModule = "tts";
}

json VoiceConfig::to_json() const {
  return {{"provider_base_url", provider_base_url},
          {"voice_name", voice_name},
          {"sample_rate_hz", sample_rate_hz},
          {"format", "WAV_PCM16_MONO"},
          {"api_key_env", api_key_env},
          {"timeout_ms", timeout.count()},
          {"max_retries", retry.max_retries},
          {"backoff_ms", retry.base_delay.count()}};
}

VoiceConfig VoiceConfig::from_json(const json& j) {
  VoiceConfig c;
  c.provider_base_url = j.value("provider_base_url", c.provider_base_url);
  c.voice_name = j.value("voice_name", c.voice_name);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  if (j.contains("format") && j.at("format") != "WAV_PCM16_MONO") {
    throw Error(Errc::ConfigError, kModule, "only WAV_PCM16_MONO output is supported");
  }
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
  c.retry.max_retries = j.value("max_retries", c.retry.max_retries);
  c.retry.base_delay = std::chrono::milliseconds(j.value("backoff_ms", c.retry.base_delay.count()));
  c.validate();
  return c;
}

void VoiceConfig::validate() const {
  if (sample_rate_hz == 0) throw Error(Errc::ConfigError, kModule, "sample_rate_hz must be positive");
  if (voice_name.empty()) throw Error(Errc::ConfigError, kModule, "voice_name must be set");
  if (retry.max_retries < 0) throw Error(Errc::ConfigError, kModule, "max_retries must be >= 0");
}

std::string tts_cache_key(std::string_view normalized_text, std::string_view voice_name,
                          std::uint32_t sample_rate_hz) {
  const std::string rate = std::to_string(sample_rate_hz);
  const std::array<std::string_view, 4> fields = {"tts-v1", normalized_text, voice_name, rate};
  return sha256_fields(fields);
}

fs::path tts_cache_path(const fs::path& cache_dir, const std::string& key) {
  return cache_dir / key.substr(0, 2) / (key + ".wav");
}

SpeechSynthesizer::SpeechSynthesizer(VoiceConfig cfg, fs::path cache_dir)
    : cfg_(std::move(cfg)), cache_dir_(std::move(cache_dir)), http_(cfg_.provider_base_url, cfg_.timeout) {
  cfg_.validate();
}

std::optional<AudioAsset> SpeechSynthesizer::lookup(const std::string& key) const {
  const fs::path path = tts_cache_path(cache_dir_, key);
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto info = parse_wav(bytes);
  if (!info || info->duration_ms() <= 0) return std::nullopt;  // corrupt entry: resynthesize
  return AudioAsset{key, path, info->duration_ms(), true};
}

AudioAsset SpeechSynthesizer::fetch(const std::string& text, const std::string& key) {
  const json body = {{"text", text},
                     {"voice_name", cfg_.voice_name},
                     {"sample_rate_hz", cfg_.sample_rate_hz},
                     {"format", "WAV_PCM16_MONO"}};
  const auto headers = auth_headers(cfg_.api_key_env);
  std::string audio;
  try {
    audio = with_retries(cfg_.retry, [&] {
      ++requests_;
      auto res = http_.post("/synthesize", body.dump(), "application/json", headers);
      if (!res) throw RetryableFailure("provider unreachable");
      if (is_retryable_status(res->status)) {
        throw RetryableFailure("provider returned HTTP " + std::to_string(res->status));
      }
      if (res->status != 200) {
        throw Error(Errc::ProviderUnavailable, kModule,
                    "provider rejected request with HTTP " + std::to_string(res->status));
      }
      return std::move(res->body);
    });
  } catch (const RetryableFailure& e) {
    throw Error(Errc::ProviderUnavailable, kModule,
                std::string(e.what()) + " after " + std::to_string(cfg_.retry.max_retries) + " retries");
  }
  auto info = parse_wav(audio);
  if (!info) throw Error(Errc::BadAudio, kModule, "provider response is not a RIFF/WAVE file");
  if (!info->is_pcm16_mono() || info->sample_rate != cfg_.sample_rate_hz) {
    throw Error(Errc::BadAudio, kModule,
                "provider returned " + std::to_string(info->channels) + "ch/" +
                    std::to_string(info->bits_per_sample) + "bit/" + std::to_string(info->sample_rate) +
                    "Hz audio, expected PCM16 mono at " + std::to_string(cfg_.sample_rate_hz) + "Hz");
  }
  if (info->duration_ms() <= 0) throw Error(Errc::BadAudio, kModule, "provider returned empty audio");
  const fs::path path = tts_cache_path(cache_dir_, key);
  try {
    write_file_atomic(path, audio);
  } catch (const Error& e) {
    throw Error(Errc::IoError, kModule, e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error(Errc::IoError, kModule, e.what());
  }
  return AudioAsset{key, path, info->duration_ms(), false};
}

AudioAsset SpeechSynthesizer::synthesize(const std::string& normalized_text) {
  if (trim(normalized_text).empty()) throw Error(Errc::InvalidSample, kModule, "cannot synthesize empty text");
  const std::string key = tts_cache_key(normalized_text, cfg_.voice_name, cfg_.sample_rate_hz);
  if (auto hit = lookup(key)) return *hit;

  std::promise<AudioAsset> promise;
  std::shared_future<AudioAsset> shared;
  bool owner = false;
  {
    std::lock_guard lock(mu_);
    auto it = in_flight_.find(key);
    if (it != in_flight_.end()) {
      shared = it->second;
    } else {
      // Another caller may have finished between lookup and lock.
      if (auto hit = lookup(key)) return *hit;
      shared = promise.get_future().share();
      in_flight_.emplace(key, shared);
      owner = true;
    }
  }
  if (!owner) {
    AudioAsset a = shared.get();
    a.from_cache = true;
    return a;
  }
  try {
    AudioAsset asset = fetch(normalized_text, key);
    promise.set_value(asset);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  {
    std::lock_guard lock(mu_);
    in_flight_.erase(key);
  }
  return shared.get();
}

AudioAsset synthesize(const std::string& normalized_text, const VoiceConfig& cfg, const fs::path& cache_dir) {
  SpeechSynthesizer synth(cfg, cache_dir);
  return synth.synthesize(normalized_text);
}

SynthesisResult synthesize_manifest(const DatasetManifest& manifest, SpeechSynthesizer& synth,
                                    std::size_t max_in_flight) {
  const auto& in = manifest.samples();
  std::vector<Sample> out = in;
  std::vector<std::optional<ItemFailure>> failures(in.size());
  std::vector<char> cached(in.size(), 0);
  const std::size_t before = synth.requests_issued();

  parallel_for(in.size(), max_in_flight, [&](std::size_t i) {
    const Sample& s = in[i];
    if (s.normalized_question_text.empty()) {
      failures[i] = ItemFailure{s.id, Errc::InvalidSample, "sample has no normalized question text"};
      return;
    }
    try {
      const AudioAsset a = synth.synthesize(s.normalized_question_text);
      out[i].audio_ref = fs::relative(a.path, synth.cache_dir()).generic_string();
      cached[i] = a.from_cache ? 1 : 0;
    } catch (const Error& e) {
      failures[i] = ItemFailure{s.id, e.code(), e.what()};
    } catch (const std::exception& e) {
      failures[i] = ItemFailure{s.id, Errc::IoError, e.what()};
    }
  });

  SynthesisResult result;
  result.report.total = in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (failures[i]) {
      out[i].audio_ref.reset();
      result.report.failures.push_back(*failures[i]);
    } else if (cached[i] != 0) {
      ++result.report.skipped;
    } else {
      ++result.report.succeeded;
    }
  }
  result.report.requests = synth.requests_issued() - before;
  result.manifest = DatasetManifest(manifest.name(), std::move(out));
  return result;
}

}  // namespace medvqa
