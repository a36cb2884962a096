#include "medvqa/net.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>

#include "medvqa/error.hpp"
#include "medvqa/util.hpp"

namespace medvqa {

std::chrono::milliseconds RetryPolicy::delay_for(int retry_index) const {
  auto d = base_delay;
  for (int i = 0; i < retry_index && d < max_delay; ++i) d *= 2;
  return std::min(d, max_delay);
}

void parallel_for(std::size_t count, std::size_t max_in_flight, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

namespace {

void split_url(const std::string& url, std::string& origin, std::string& prefix) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::ConfigError, "net", "URL must start with http:// or https://: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  origin = url.substr(0, path_start);
  prefix = path_start == std::string::npos ? std::string() : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
}

std::unique_ptr<httplib::Client> make_client(const std::string& origin, std::chrono::milliseconds timeout) {
  auto cli = std::make_unique<httplib::Client>(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  cli->set_connection_timeout(secs.count(), usecs.count());
  cli->set_read_timeout(secs.count(), usecs.count());
  cli->set_write_timeout(secs.count(), usecs.count());
  cli->set_keep_alive(false);
  return cli;
}

httplib::Headers to_headers(const std::map<std::string, std::string>& headers) {
  httplib::Headers out;
  for (const auto& [k, v] : headers) out.emplace(k, v);
  return out;
}

std::optional<HttpResponse> convert(const httplib::Result& res) {
  if (!res) return std::nullopt;
  HttpResponse out;
  out.status = res->status;
  out.body = res->body;
  out.content_type = res->get_header_value("Content-Type");
  return out;
}

}  // namespace

HttpClient::HttpClient(std::string base_url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  split_url(base_url, origin_, prefix_);
}

std::optional<HttpResponse> HttpClient::post(const std::string& path, const std::string& body,
                                             const std::string& content_type,
                                             const std::map<std::string, std::string>& headers) const {
  auto cli = make_client(origin_, timeout_);
  return convert(cli->Post(prefix_ + path, to_headers(headers), body, content_type));
}

std::optional<HttpResponse> HttpClient::post_multipart(const std::string& path,
                                                       const std::vector<MultipartPart>& parts,
                                                       const std::map<std::string, std::string>& headers) const {
  auto cli = make_client(origin_, timeout_);
  httplib::MultipartFormDataItems items;
  items.reserve(parts.size());
  for (const auto& p : parts) items.push_back({p.name, p.content, p.filename, p.content_type});
  return convert(cli->Post(prefix_ + path, to_headers(headers), items));
}

std::optional<HttpResponse> HttpClient::get(const std::string& path,
                                            const std::map<std::string, std::string>& headers) const {
  auto cli = make_client(origin_, timeout_);
  return convert(cli->Get(prefix_ + path, to_headers(headers)));
}

bool is_retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::map<std::string, std::string> auth_headers(const std::string& api_key_env) {
  const std::string key = env_or_empty(api_key_env);
  if (key.empty()) return {};
  return {{"Authorization", "Bearer " + key}};
}

}  // namespace medvqa
