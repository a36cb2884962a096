#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace medvqa {

/// Exponential backoff: attempt k (0-based retry index) waits
/// min(base_delay * 2^k, max_delay). Total attempts = 1 + max_retries.
struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds max_delay{5000};

  std::chrono::milliseconds delay_for(int retry_index) const;
};

/// Thrown by an attempt that may succeed if repeated (transport failure,
/// 5xx, 429, unparseable reply).
class RetryableFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `attempt` until it returns, throws a non-retryable exception, or the
/// retry budget is spent; in the last case the final RetryableFailure is
/// rethrown.
template <typename F>
auto with_retries(const RetryPolicy& policy, F&& attempt) -> decltype(attempt()) {
  for (int retry = 0;; ++retry) {
    try {
      return attempt();
    } catch (const RetryableFailure&) {
      if (retry >= policy.max_retries) throw;
      std::this_thread::sleep_for(policy.delay_for(retry));
    }
  }
}

/// Calls fn(i) for i in [0, count) on at most `max_in_flight` threads.
/// fn must not throw; callers record per-item failures themselves.
void parallel_for(std::size_t count, std::size_t max_in_flight, const std::function<void(std::size_t)>& fn);

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
};

struct MultipartPart {
  std::string name;
  std::string content;
  std::string filename;
  std::string content_type;
};

/// Minimal HTTP client bound to a base URL ("http://host:port/prefix").
/// Each call opens its own connection, so one instance is safe to share
/// across threads. Transport failures return std::nullopt.
class HttpClient {
 public:
  HttpClient(std::string base_url, std::chrono::milliseconds timeout);

  std::optional<HttpResponse> post(const std::string& path, const std::string& body,
                                   const std::string& content_type,
                                   const std::map<std::string, std::string>& headers = {}) const;
  std::optional<HttpResponse> post_multipart(const std::string& path, const std::vector<MultipartPart>& parts,
                                             const std::map<std::string, std::string>& headers = {}) const;
  std::optional<HttpResponse> get(const std::string& path,
                                  const std::map<std::string, std::string>& headers = {}) const;

  const std::string& origin() const { return origin_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

/// True for statuses worth retrying: 408, 429 and 5xx.
bool is_retryable_status(int status);

/// Bearer authorization header when `api_key_env` names a set variable.
std::map<std::string, std::string> auth_headers(const std::string& api_key_env);

}  // namespace medvqa
