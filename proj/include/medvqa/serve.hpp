#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace medvqa {

struct ServeOptions {
  std::filesystem::path runs_dir = "runs";
  std::string run_id;  // empty: latest run in the index
  std::filesystem::path dataset_root = ".";
  std::filesystem::path audio_root = "cache";
  std::string model_id;  // queue model; empty: first model in the predictions
};

/// REST API over one run directory:
///   GET  /api/samples
///   GET  /api/predictions?model=
///   GET  /api/queue?rater=        (or X-Rater header)
///   POST /api/verdicts            (body mirrors a verdicts-file record)
///   GET  /api/progress?rater=
///   GET  /api/agreement
///   GET  /api/media/image/<path>, GET /api/media/audio/<ref>
/// Errors are {"error": {"code", "qualified_code", "message"}} with a
/// matching HTTP status.
class ReviewServer {
 public:
  explicit ReviewServer(ServeOptions options);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds (port 0 picks a free port) and serves in a background thread.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves in the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace medvqa
