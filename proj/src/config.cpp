#include "medvqa/config.hpp"

#include <algorithm>
#include <cstdlib>

namespace medvqa {

namespace fs = std::filesystem;

namespace {
constexpr const char* kModule = "cli";

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= key.size(); ++i) {
    if (i == key.size() || key[i] == '.') {
      parts.push_back(key.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

json convert(const ConfigKey& k, const std::string& raw, const std::string& origin) {
  const std::string v = trim(raw);
  try {
    std::size_t used = 0;
    switch (k.type) {
      case ConfigValueType::String: return raw;
      case ConfigValueType::Integer: {
        const long long n = std::stoll(v, &used);
        if (used != v.size()) break;
        return n;
      }
      case ConfigValueType::Number: {
        const double d = std::stod(v, &used);
        if (used != v.size()) break;
        return d;
      }
    }
  } catch (const std::exception&) {
  }
  throw Error(Errc::ConfigError, kModule, origin + ": " + k.key + " expects a number, got \"" + raw + "\"");
}

// Deep merge: objects merge key by key, arrays index by index, everything
// else replaces.
void merge(json& base, const json& over) {
  if (base.is_array() && over.is_array()) {
    json out = json::array();
    for (std::size_t i = 0; i < over.size(); ++i) {
      json item = i < base.size() ? base[i] : json::object();
      merge(item, over[i]);
      out.push_back(std::move(item));
    }
    base = std::move(out);
    return;
  }
  if (!base.is_object() || !over.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key())) merge(base[it.key()], it.value());
    else base[it.key()] = it.value();
  }
}

void set_path(json& root, const std::string& key, json value) {
  auto parts = split_key(key);
  json* node = &root;
  if (parts.front() == "judge") {
    json& judges = root["judges"];
    if (!judges.is_array()) judges = json::array();
    if (judges.empty()) judges.push_back(JudgeClientConfig{}.to_json());
    node = &judges[0];
    parts.erase(parts.begin());
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (!child.is_object()) child = json::object();
    node = &child;
  }
  (*node)[parts.back()] = std::move(value);
}

}  // namespace

json HarnessConfig::to_json() const {
  json js = json::array();
  for (const auto& j : judges) js.push_back(j.to_json());
  return {{"dataset_root", dataset_root.string()},
          {"cache_dir", cache_dir.string()},
          {"runs_dir", runs_dir.string()},
          {"voice", voice.to_json()},
          {"judges", js},
          {"embedding", embedding.to_json()},
          {"inference", inference.to_json()},
          {"concurrency", {{"tts", tts_max_in_flight}}}};
}

HarnessConfig HarnessConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, kModule, "config must be a JSON object");
  HarnessConfig c;
  try {
    c.dataset_root = j.value("dataset_root", c.dataset_root.string());
    c.cache_dir = j.value("cache_dir", c.cache_dir.string());
    c.runs_dir = j.value("runs_dir", c.runs_dir.string());
    if (j.contains("voice")) c.voice = VoiceConfig::from_json(j.at("voice"));
    if (j.contains("judges")) {
      for (const auto& jj : j.at("judges")) c.judges.push_back(JudgeClientConfig::from_json(jj));
    }
    if (j.contains("embedding")) c.embedding = EmbeddingServiceConfig::from_json(j.at("embedding"));
    if (j.contains("inference")) c.inference = InferenceEndpointConfig::from_json(j.at("inference"));
    if (j.contains("concurrency")) c.tts_max_in_flight = j.at("concurrency").value("tts", c.tts_max_in_flight);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, kModule, std::string("invalid config: ") + e.what());
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, kModule, std::string("invalid config: ") + e.what());
  }
  if (c.tts_max_in_flight == 0) throw Error(Errc::ConfigError, kModule, "concurrency.tts must be positive");
  return c;
}

const std::vector<JudgeClientConfig>& HarnessConfig::require_judges() const {
  if (judges.empty()) {
    throw Error(Errc::ConfigError, kModule, "no judge configured (set judges in the config file or --judge-model)");
  }
  return judges;
}

const std::vector<ConfigKey>& config_keys() {
  using T = ConfigValueType;
  static const std::vector<ConfigKey> keys = {
      {"dataset_root", T::String},
      {"cache_dir", T::String},
      {"runs_dir", T::String},
      {"voice.provider_base_url", T::String},
      {"voice.voice_name", T::String},
      {"voice.sample_rate_hz", T::Integer},
      {"voice.api_key_env", T::String},
      {"voice.timeout_ms", T::Integer},
      {"voice.max_retries", T::Integer},
      {"embedding.base_url", T::String},
      {"embedding.model_name", T::String},
      {"embedding.dimension", T::Integer},
      {"embedding.api_key_env", T::String},
      {"embedding.max_in_flight", T::Integer},
      {"embedding.max_retries", T::Integer},
      {"inference.base_url", T::String},
      {"inference.model_id", T::String},
      {"inference.input_mode", T::String},
      {"inference.api_key_env", T::String},
      {"inference.timeout_ms", T::Integer},
      {"inference.max_retries", T::Integer},
      {"inference.max_in_flight", T::Integer},
      {"judge.base_url", T::String},
      {"judge.model_name", T::String},
      {"judge.rater_id", T::String},
      {"judge.api_key_env", T::String},
      {"judge.temperature", T::Number},
      {"judge.max_retries", T::Integer},
      {"judge.max_in_flight", T::Integer},
      {"concurrency.tts", T::Integer},
  };
  return keys;
}

std::string env_var_for(const std::string& key) {
  std::string out = "MEDVQA_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

json resolve_config_json(const json& file, const EnvLookup& env, const std::map<std::string, std::string>& flags) {
  if (!file.is_object()) throw Error(Errc::ConfigError, kModule, "config file must hold a JSON object");
  json cfg = HarnessConfig{}.to_json();
  for (const auto& k : config_keys()) {
    if (auto v = env(env_var_for(k.key))) set_path(cfg, k.key, convert(k, *v, env_var_for(k.key)));
  }
  merge(cfg, file);
  for (const auto& [key, value] : flags) {
    auto it = std::find_if(config_keys().begin(), config_keys().end(),
                           [&](const ConfigKey& k) { return k.key == key; });
    if (it == config_keys().end()) throw Error(Errc::ConfigError, kModule, "unknown setting \"" + key + "\"");
    set_path(cfg, key, convert(*it, value, "--set"));
  }
  return cfg;
}

HarnessConfig resolve_config(const json& file, const EnvLookup& env, const std::map<std::string, std::string>& flags) {
  return HarnessConfig::from_json(resolve_config_json(file, env, flags));
}

json load_config_file(const fs::path& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw Error(Errc::ConfigError, kModule, "config file " + path.string() + " not found");
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(Errc::ConfigError, kModule, "config file " + path.string() + " is not a JSON object");
  }
  return j;
}

}  // namespace medvqa
