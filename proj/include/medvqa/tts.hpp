#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <mutex>
#include <string>

#include "medvqa/dataset.hpp"
#include "medvqa/error.hpp"
#include "medvqa/net.hpp"

namespace medvqa {

enum class AudioFormat { WavPcm16Mono };

/// Provider contract: POST <provider_base_url>/synthesize with JSON
/// {"text", "voice_name", "sample_rate_hz", "format"}; the reply body is the
/// audio file. The API key, when configured, is sent as a bearer token read
/// from the environment variable named by `api_key_env`.
struct VoiceConfig {
  std::string provider_base_url;
  std::string voice_name = "en-US-Standard-C";
  std::uint32_t sample_rate_hz = 16000;
  AudioFormat format = AudioFormat::WavPcm16Mono;
  std::string api_key_env;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;

  json to_json() const;
  static VoiceConfig from_json(const json& j);
  void validate() const;
};

struct AudioAsset {
  std::string cache_key;
  std::filesystem::path path;
  std::int64_t duration_ms = 0;
  bool from_cache = false;
};

/// Hex digest of (normalized text, voice name, sample rate).
std::string tts_cache_key(std::string_view normalized_text, std::string_view voice_name,
                          std::uint32_t sample_rate_hz);

/// `<cache_dir>/<first 2 hex>/<key>.wav`
std::filesystem::path tts_cache_path(const std::filesystem::path& cache_dir, const std::string& key);

/// Cache-backed synthesizer. Concurrent calls for the same key share one
/// provider request; distinct keys proceed in parallel.
class SpeechSynthesizer {
 public:
  SpeechSynthesizer(VoiceConfig cfg, std::filesystem::path cache_dir);

  AudioAsset synthesize(const std::string& normalized_text);

  /// Provider requests issued so far (including failed attempts).
  std::size_t requests_issued() const { return requests_.load(); }
  const VoiceConfig& config() const { return cfg_; }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }

 private:
  std::optional<AudioAsset> lookup(const std::string& key) const;
  AudioAsset fetch(const std::string& text, const std::string& key);

  VoiceConfig cfg_;
  std::filesystem::path cache_dir_;
  HttpClient http_;
  std::atomic<std::size_t> requests_{0};
  std::mutex mu_;
  std::map<std::string, std::shared_future<AudioAsset>> in_flight_;
};

AudioAsset synthesize(const std::string& normalized_text, const VoiceConfig& cfg,
                      const std::filesystem::path& cache_dir);

struct SynthesisResult {
  DatasetManifest manifest;  // samples that succeeded carry audio_ref
  BatchReport report;
};

/// Synthesizes every sample's normalized question. audio_ref is stored
/// relative to `cache_dir`. Output order equals input order.
SynthesisResult synthesize_manifest(const DatasetManifest& manifest, SpeechSynthesizer& synth,
                                    std::size_t max_in_flight);

}  // namespace medvqa
