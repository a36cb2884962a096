#include "medvqa/mock_services.hpp"

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "medvqa/text_metrics.hpp"
#include "medvqa/wav.hpp"

namespace medvqa {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct EndpointState {
  std::size_t calls = 0;
  std::size_t in_flight = 0;
  std::size_t max_in_flight = 0;
  std::size_t fail_budget = 0;
  bool down = false;
  std::chrono::milliseconds delay{0};
};

std::string alter_answer(const std::string& answer, std::size_t salt) {
  // Keep the first sentence, trim the explanation a little.
  auto words = split_whitespace(answer);
  if (words.size() > 6 && salt % 3 != 0) words.pop_back();
  if (words.size() > 8 && salt % 4 == 0) words.erase(words.begin() + static_cast<std::ptrdiff_t>(words.size() / 2));
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  if (!out.empty() && out.back() != '.') out += '.';
  return out;
}

}  // namespace

std::string mock_judge_reply(const MockChatRequest& req) {
  const std::uint64_t h = fnv1a(req.model + "\n" + req.user);
  PartialVerdict v;
  v.kind = req.kind;
  if (req.kind == VerdictKind::Structure) {
    v.structure_ok = h % 5 != 0;
    v.rationale = *v.structure_ok ? "The first sentence answers and the rest explains." : "No direct answer first.";
  } else {
    v.level = level_from_value(static_cast<long long>(1 + h % 3));
    v.rationale = "Scored by the mock judge.";
  }
  return render_verdict(v);
}

std::vector<double> mock_embedding(const std::string& text, std::size_t dimension) {
  std::vector<double> v(dimension, 0.0);
  if (dimension == 0) return v;
  for (const auto& tok : metric_tokens(text)) {
    const std::uint64_t h = fnv1a(tok);
    v[h % dimension] += 1.0;
    v[(h >> 20) % dimension] += 0.5;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    for (double& x : v) x /= std::sqrt(norm);
  }
  return v;
}

struct MockServices::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::string host = "127.0.0.1";
  mutable std::mutex mu;
  std::map<std::string, EndpointState> state;
  std::size_t dimension = 768;
  std::function<std::string(const MockChatRequest&)> chat_fn;
  std::function<std::string(const MockInferRequest&)> infer_fn;
  std::map<std::string, std::string> answers;  // image file name -> answer

  // Returns false when the request must fail with 503.
  bool enter(const std::string& ep, std::size_t& index) {
    std::chrono::milliseconds delay{0};
    bool fail = false;
    {
      std::lock_guard lock(mu);
      auto& s = state[ep];
      index = s.calls++;
      ++s.in_flight;
      s.max_in_flight = std::max(s.max_in_flight, s.in_flight);
      delay = s.delay;
      if (s.down) fail = true;
      else if (s.fail_budget > 0) {
        --s.fail_budget;
        fail = true;
      }
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    return !fail;
  }

  void leave(const std::string& ep) {
    std::lock_guard lock(mu);
    --state[ep].in_flight;
  }

  template <typename F>
  void route(const std::string& ep, const httplib::Request& req, httplib::Response& res, F&& body) {
    std::size_t index = 0;
    const bool ok = enter(ep, index);
    if (!ok) {
      res.status = 503;
      res.set_content(R"({"error":"unavailable"})", "application/json");
    } else {
      try {
        body(req, res, index);
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      }
    }
    leave(ep);
  }

  void install() {
    server.Post("/synthesize", [this](const httplib::Request& req, httplib::Response& res) {
      route("synthesize", req, res, [](const httplib::Request& rq, httplib::Response& rs, std::size_t) {
        const json j = json::parse(rq.body);
        const std::string text = j.at("text").get<std::string>();
        const auto rate = j.value("sample_rate_hz", 16000u);
        const auto words = split_whitespace(text).size();
        const double freq = 200.0 + static_cast<double>(fnv1a(text) % 600);
        rs.set_content(synth_tone_wav(rate, static_cast<std::uint32_t>(150 + 40 * words), freq), "audio/wav");
      });
    });
    server.Post("/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      route("embeddings", req, res, [this](const httplib::Request& rq, httplib::Response& rs, std::size_t) {
        const json j = json::parse(rq.body);
        std::size_t dim;
        {
          std::lock_guard lock(mu);
          dim = dimension;
        }
        if (j.contains("dimensions") && j.at("dimensions").is_number_unsigned()) dim = j.at("dimensions").get<std::size_t>();
        json data = json::array();
        std::size_t i = 0;
        for (const auto& t : j.at("input")) {
          data.push_back({{"index", i++}, {"embedding", mock_embedding(t.get<std::string>(), dim)}});
        }
        rs.set_content(json({{"data", data}, {"model", j.value("model", "")}}).dump(), "application/json");
      });
    });
    server.Post("/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      route("chat", req, res, [this](const httplib::Request& rq, httplib::Response& rs, std::size_t index) {
        const json j = json::parse(rq.body);
        MockChatRequest c;
        c.model = j.value("model", "");
        c.index = index;
        for (const auto& m : j.at("messages")) {
          if (m.value("role", "") == "system") c.system = m.value("content", "");
          if (m.value("role", "") == "user") c.user = m.value("content", "");
        }
        c.kind = c.user.find(kStructureCriteria[0]) != std::string::npos &&
                         c.user.find(level_definition(RubricLevel::FullyCorrect)) == std::string::npos
                     ? VerdictKind::Structure
                     : VerdictKind::Reasoning;
        std::function<std::string(const MockChatRequest&)> fn;
        {
          std::lock_guard lock(mu);
          fn = chat_fn;
        }
        const std::string reply = fn ? fn(c) : mock_judge_reply(c);
        json out = {{"id", "mock-" + std::to_string(index)},
                    {"model", c.model},
                    {"choices", json::array({{{"index", 0},
                                              {"message", {{"role", "assistant"}, {"content", reply}}},
                                              {"finish_reason", "stop"}}})}};
        rs.set_content(out.dump(), "application/json");
      });
    });
    server.Post("/infer", [this](const httplib::Request& req, httplib::Response& res) {
      route("infer", req, res, [this](const httplib::Request& rq, httplib::Response& rs, std::size_t) {
        MockInferRequest r;
        if (!rq.has_file("image") || !rq.has_file("model_id")) throw std::runtime_error("missing image or model_id part");
        const auto image = rq.get_file_value("image");
        r.image_filename = image.filename;
        r.image_bytes = image.content.size();
        r.model_id = rq.get_file_value("model_id").content;
        if (rq.has_file("audio")) r.audio_bytes = rq.get_file_value("audio").content.size();
        if (rq.has_file("question")) r.question = rq.get_file_value("question").content;
        if (!r.question && r.audio_bytes == 0) throw std::runtime_error("need an audio or question part");
        std::function<std::string(const MockInferRequest&)> fn;
        std::string answer;
        {
          std::lock_guard lock(mu);
          fn = infer_fn;
          auto it = answers.find(r.image_filename);
          if (it != answers.end()) answer = it->second;
        }
        std::string text;
        if (fn) text = fn(r);
        else if (!answer.empty()) text = alter_answer(answer, fnv1a(r.image_filename));
        else if (r.question) text = *r.question;
        else text = "The image shows no clear abnormality. The structures appear within normal limits.";
        rs.set_content(json({{"prediction", text}}).dump(), "application/json");
      });
    });
  }
};

MockServices::MockServices() : impl_(std::make_unique<Impl>()) { impl_->install(); }

MockServices::~MockServices() { stop(); }

void MockServices::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) throw Error(Errc::IoError, "mock", "cannot bind " + host);
    impl_->port = port;
  }
  if (impl_->port <= 0) throw Error(Errc::IoError, "mock", "cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockServices::listen(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) throw Error(Errc::IoError, "mock", "cannot listen on " + host);
}

void MockServices::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int MockServices::port() const { return impl_->port; }

std::string MockServices::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

std::size_t MockServices::calls(const std::string& endpoint) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->state.find(endpoint);
  return it == impl_->state.end() ? 0 : it->second.calls;
}

std::size_t MockServices::max_in_flight(const std::string& endpoint) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->state.find(endpoint);
  return it == impl_->state.end() ? 0 : it->second.max_in_flight;
}

void MockServices::reset_counters() {
  std::lock_guard lock(impl_->mu);
  for (auto& [ep, s] : impl_->state) {
    s.calls = 0;
    s.max_in_flight = 0;
  }
}

void MockServices::fail_next(const std::string& endpoint, std::size_t n) {
  std::lock_guard lock(impl_->mu);
  impl_->state[endpoint].fail_budget = n;
}

void MockServices::set_unavailable(const std::string& endpoint, bool down) {
  std::lock_guard lock(impl_->mu);
  impl_->state[endpoint].down = down;
}

void MockServices::set_delay(const std::string& endpoint, std::chrono::milliseconds delay) {
  std::lock_guard lock(impl_->mu);
  impl_->state[endpoint].delay = delay;
}

void MockServices::set_embedding_dimension(std::size_t dim) {
  std::lock_guard lock(impl_->mu);
  impl_->dimension = dim;
}

void MockServices::set_chat_handler(std::function<std::string(const MockChatRequest&)> fn) {
  std::lock_guard lock(impl_->mu);
  impl_->chat_fn = std::move(fn);
}

void MockServices::set_infer_handler(std::function<std::string(const MockInferRequest&)> fn) {
  std::lock_guard lock(impl_->mu);
  impl_->infer_fn = std::move(fn);
}

void MockServices::use_manifest_answers(const DatasetManifest& manifest) {
  std::lock_guard lock(impl_->mu);
  for (const auto& s : manifest.samples()) {
    impl_->answers[std::filesystem::path(s.image_path).filename().string()] = s.answer_text;
  }
}

}  // namespace medvqa
