#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medvqa/inference.hpp"
#include "medvqa/judge.hpp"
#include "medvqa/text_metrics.hpp"
#include "medvqa/tts.hpp"

namespace medvqa {

struct HarnessConfig {
  std::filesystem::path dataset_root = ".";
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path runs_dir = "runs";
  VoiceConfig voice;
  std::vector<JudgeClientConfig> judges;
  EmbeddingServiceConfig embedding;
  InferenceEndpointConfig inference;
  std::size_t tts_max_in_flight = 4;

  json to_json() const;
  static HarnessConfig from_json(const json& j);

  /// Throws CONFIG_ERROR when no judge is configured.
  const std::vector<JudgeClientConfig>& require_judges() const;
};

enum class ConfigValueType { String, Integer, Number };

/// A scalar setting reachable from the environment and from flags.
/// "judge.*" keys address the first judge.
struct ConfigKey {
  std::string key;  // dotted path, e.g. "voice.voice_name"
  ConfigValueType type;
};

const std::vector<ConfigKey>& config_keys();

/// "voice.voice_name" -> "MEDVQA_VOICE_VOICE_NAME"
std::string env_var_for(const std::string& key);

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;

/// Process environment lookup.
EnvLookup process_env();

/// Layers, lowest to highest priority: built-in defaults, environment,
/// config file, flags. Flags and environment values are strings converted
/// to each key's type; unknown flag keys throw CONFIG_ERROR.
json resolve_config_json(const json& file, const EnvLookup& env, const std::map<std::string, std::string>& flags);

HarnessConfig resolve_config(const json& file, const EnvLookup& env, const std::map<std::string, std::string>& flags);

/// Reads a JSON config file; an empty path yields an empty object.
json load_config_file(const std::filesystem::path& path);

}  // namespace medvqa
