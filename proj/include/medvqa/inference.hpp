#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "medvqa/dataset.hpp"
#include "medvqa/error.hpp"
#include "medvqa/net.hpp"
#include "medvqa/predictions.hpp"

namespace medvqa {

/// Endpoint contract: POST <base_url>/infer as multipart/form-data with parts
/// `image` (image bytes), `audio` (WAV bytes, speech mode) or `question`
/// (UTF-8 text, text mode), and `model_id`. The reply is either JSON
/// {"prediction": "..."} or a text/plain body holding the prediction.
struct InferenceEndpointConfig {
  std::string base_url;
  std::string model_id;
  InputMode input_mode = InputMode::Speech;
  std::string api_key_env;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};
  std::size_t max_in_flight = 4;

  json to_json() const;
  /// Does not validate; run_inference does.
  static InferenceEndpointConfig from_json(const json& j);
  void validate() const;
};

struct InferenceResult {
  std::vector<Prediction> predictions;  // manifest order, this model and mode only
  BatchReport report;
};

/// Queries the endpoint once per manifest sample and keeps `out_path` in
/// manifest order. Records already present for (sample, model, mode) are
/// reused without a request. Image paths resolve under `dataset_root`,
/// audio refs under `audio_root`.
/// Throws MISSING_AUDIO (speech mode, naming the first sample without
/// audio) before any request is sent. Per-sample ENDPOINT_UNAVAILABLE
/// failures are collected in the report.
InferenceResult run_inference(const DatasetManifest& manifest, const InferenceEndpointConfig& cfg,
                              const std::filesystem::path& dataset_root, const std::filesystem::path& audio_root,
                              const std::filesystem::path& out_path);

/// Parses an endpoint reply body into the prediction text.
std::string parse_inference_reply(const HttpResponse& res);

}  // namespace medvqa
