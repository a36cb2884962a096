#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "medvqa/dataset.hpp"
#include "medvqa/judge.hpp"

namespace medvqa {

/// One decoded request to the mock inference endpoint.
struct MockInferRequest {
  std::string model_id;
  std::string image_filename;
  std::size_t image_bytes = 0;
  std::size_t audio_bytes = 0;
  std::optional<std::string> question;
};

/// One decoded request to the mock chat endpoint.
struct MockChatRequest {
  std::string model;
  std::string system;
  std::string user;
  VerdictKind kind = VerdictKind::Reasoning;  // guessed from the prompt
  std::size_t index = 0;                      // 0-based call index for this endpoint
};

/// Local stand-ins for the TTS provider, embedding service, chat judge and
/// inference endpoint, served from one HTTP port. Used by tests and by the
/// `mock` CLI command for offline demos. Endpoint names for the counters:
/// "synthesize", "embeddings", "chat", "infer".
class MockServices {
 public:
  MockServices();
  ~MockServices();
  MockServices(const MockServices&) = delete;
  MockServices& operator=(const MockServices&) = delete;

  /// Binds to host:port (port 0 picks a free one) and serves in a
  /// background thread.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves in the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  int port() const;
  std::string base_url() const;

  std::size_t calls(const std::string& endpoint) const;
  std::size_t max_in_flight(const std::string& endpoint) const;
  void reset_counters();

  /// The first `n` requests to `endpoint` (counted from now) answer 503.
  void fail_next(const std::string& endpoint, std::size_t n);
  /// Every request to `endpoint` answers 503 while set.
  void set_unavailable(const std::string& endpoint, bool down);
  void set_delay(const std::string& endpoint, std::chrono::milliseconds delay);
  /// Dimension returned when a request does not name one (default 768).
  void set_embedding_dimension(std::size_t dim);

  /// Judge reply text; the default grades deterministically from a hash of
  /// the model name and prompt.
  void set_chat_handler(std::function<std::string(const MockChatRequest&)> fn);
  /// Inference reply text. The default answers from use_manifest_answers()
  /// when the image is known, else echoes the question part, else returns a
  /// fixed sentence.
  void set_infer_handler(std::function<std::string(const MockInferRequest&)> fn);

  /// Makes the default inference handler answer with a lightly altered
  /// ground truth, looked up by image file name.
  void use_manifest_answers(const DatasetManifest& manifest);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Default judge reply used by the mock chat endpoint.
std::string mock_judge_reply(const MockChatRequest& req);

/// Deterministic bag-of-words embedding used by the mock embedding service.
std::vector<double> mock_embedding(const std::string& text, std::size_t dimension);

}  // namespace medvqa
