#include "medvqa/serve.hpp"

#include <httplib.h>

#include <mutex>
#include <set>
#include <thread>

#include "medvqa/reporting.hpp"

namespace medvqa {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "serve";

int status_for(Errc code) {
  switch (code) {
    case Errc::NotFound:
    case Errc::MissingImage:
    case Errc::MissingAudio: return 404;
    case Errc::DuplicateVerdict: return 409;
    case Errc::BadRequest:
    case Errc::OutOfRangeLevel:
    case Errc::MissingField:
    case Errc::UnknownEnum:
    case Errc::MalformedRecord: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, status_for(e.code()),
            {{"error", {{"code", to_string(e.code())}, {"qualified_code", e.qualified_code()}, {"message", e.what()}}}});
}

std::string rater_of(const httplib::Request& req, const json* body = nullptr) {
  std::string r = req.get_header_value("X-Rater");
  if (r.empty() && req.has_param("rater")) r = req.get_param_value("rater");
  if (r.empty() && body && body->contains("rater_id") && body->at("rater_id").is_string()) {
    r = body->at("rater_id").get<std::string>();
  }
  return trim(r);
}

// Resolves `rel` under `root`, refusing anything that escapes it.
std::optional<fs::path> contained(const fs::path& root, const std::string& rel) {
  if (rel.empty()) return std::nullopt;
  const fs::path p(rel);
  if (p.is_absolute()) return std::nullopt;
  for (const auto& part : p) {
    if (part == "..") return std::nullopt;
  }
  std::error_code ec;
  const fs::path base = fs::weakly_canonical(root, ec);
  if (ec) return std::nullopt;
  const fs::path full = fs::weakly_canonical(base / p, ec);
  if (ec) return std::nullopt;
  auto [bi, fi] = std::mismatch(base.begin(), base.end(), full.begin(), full.end());
  if (bi != base.end()) return std::nullopt;
  if (!fs::is_regular_file(full, ec)) return std::nullopt;
  return full;
}

std::string media_type(const fs::path& p) {
  const std::string ext = to_lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".wav") return "audio/wav";
  return "application/octet-stream";
}

}  // namespace

struct ReviewServer::Impl {
  ServeOptions opts;
  std::string run_id;
  DatasetManifest manifest;
  std::vector<Prediction> predictions;
  std::string model_id;
  std::vector<const Sample*> queue;  // samples with a prediction from model_id, manifest order
  std::map<std::string, const Prediction*> queue_pred;

  std::mutex mu;  // guards verdicts and the verdicts file
  std::vector<JudgeVerdict> verdicts;

  httplib::Server server;
  std::thread thread;
  int port = 0;

  void load() {
    run_id = opts.run_id;
    if (run_id.empty()) {
      const auto runs = list_runs(opts.runs_dir);
      if (runs.empty()) throw Error(Errc::NotFound, kModule, "no runs under " + opts.runs_dir.string());
      run_id = runs.back();
    }
    const RunBundle b = load_bundle(opts.runs_dir, run_id);
    if (!b.manifest) throw Error(Errc::NotFound, kModule, "run " + run_id + " has no manifest");
    manifest = *b.manifest;
    predictions = b.predictions;
    verdicts = b.verdicts;
    model_id = opts.model_id;
    if (model_id.empty() && !predictions.empty()) model_id = predictions.front().model_id;
    for (const auto& p : predictions) {
      if (p.model_id == model_id && !queue_pred.count(p.sample_id)) queue_pred[p.sample_id] = &p;
    }
    for (const auto& s : manifest.samples()) {
      if (queue_pred.count(s.id)) queue.push_back(&s);
    }
  }

  json sample_json(const Sample& s) const {
    return {{"id", s.id},
            {"modality", to_string(s.modality)},
            {"organ", s.organ},
            {"split", to_string(s.split)},
            {"question_type", to_string(s.question_type)},
            {"question", s.question_text},
            {"answer", s.answer_text},
            {"image_url", "/api/media/image/" + s.image_path},
            {"audio_url", s.audio_ref ? json("/api/media/audio/" + *s.audio_ref) : json(nullptr)}};
  }

  // Caller holds mu.
  bool reviewed(const std::string& rater, const std::string& sample_id) const {
    for (const auto& v : verdicts) {
      if (v.rater_id == rater && v.sample_id == sample_id && v.kind == VerdictKind::Reasoning) return true;
    }
    return false;
  }

  json progress_json(const std::string& rater) const {
    std::size_t done = 0;
    std::optional<std::size_t> next;
    for (std::size_t i = 0; i < queue.size(); ++i) {
      if (reviewed(rater, queue[i]->id)) ++done;
      else if (!next) next = i;
    }
    return {{"rater", rater},
            {"completed", done},
            {"total", queue.size()},
            {"next", next ? json(*next) : json(nullptr)},
            {"done", !next.has_value()}};
  }

  json own_verdict(const std::string& rater, const std::string& sample_id) const {
    json out = nullptr;
    for (const auto& v : verdicts) {
      if (v.rater_id != rater || v.sample_id != sample_id || v.round != 1) continue;
      if (out.is_null()) out = json::object();
      if (v.structure_ok) out["structure_ok"] = *v.structure_ok;
      if (v.level) out["level"] = level_value(*v.level);
      if (!v.rationale.empty()) out["rationale"] = v.rationale;
    }
    return out;
  }

  // Turns a POST body into one or two verdict records.
  std::vector<JudgeVerdict> verdicts_from_body(const httplib::Request& req, json body) {
    if (!body.is_object()) throw Error(Errc::BadRequest, kModule, "verdict body must be a JSON object");
    const std::string rater = rater_of(req, &body);
    if (rater.empty()) throw Error(Errc::BadRequest, kModule, "rater missing (X-Rater header or rater_id)");
    body["rater_id"] = rater;
    if (!body.contains("round")) body["round"] = 1;
    if (!body.contains("rationale")) body["rationale"] = "";
    if (!body.contains("model_id") && !model_id.empty()) body["model_id"] = model_id;
    body.erase("revise");
    std::vector<json> records;
    if (body.contains("kind")) {
      records.push_back(body);
    } else {
      if (!body.contains("structure_ok") && !body.contains("level")) {
        throw Error(Errc::MissingField, kModule, "verdict needs structure_ok and/or level");
      }
      if (body.contains("structure_ok")) {
        json r = body;
        r["kind"] = "structure";
        r.erase("level");
        records.push_back(std::move(r));
      }
      if (body.contains("level")) {
        json r = body;
        r["kind"] = "reasoning";
        r.erase("structure_ok");
        records.push_back(std::move(r));
      }
    }
    std::vector<JudgeVerdict> out;
    for (const auto& r : records) {
      JudgeVerdict v = verdict_from_record(r);
      if (!manifest.find(v.sample_id)) {
        throw Error(Errc::NotFound, kModule, "unknown sample " + v.sample_id, std::nullopt, v.sample_id);
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  void install() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Rater");
      res.status = 204;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", {{"code", "INTERNAL"}, {"qualified_code", "serve.INTERNAL"}, {"message", e.what()}}}});
      }
    });

    server.Get("/api/samples", [this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& s : manifest.samples()) arr.push_back(sample_json(s));
      send_json(res, 200, {{"samples", arr}});
    });

    server.Get("/api/predictions", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string model = req.has_param("model") ? req.get_param_value("model") : "";
      json arr = json::array();
      for (const auto& p : predictions) {
        if (model.empty() || p.model_id == model) arr.push_back(prediction_to_record(p));
      }
      send_json(res, 200, {{"predictions", arr}});
    });

    server.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string rater = rater_of(req);
      if (rater.empty()) throw Error(Errc::BadRequest, kModule, "rater missing (X-Rater header or ?rater=)");
      std::lock_guard lock(mu);
      json items = json::array();
      for (std::size_t i = 0; i < queue.size(); ++i) {
        const Sample& s = *queue[i];
        items.push_back({{"position", i},
                         {"sample", sample_json(s)},
                         {"prediction", queue_pred.at(s.id)->prediction},
                         {"verdict", own_verdict(rater, s.id)}});
      }
      json out = progress_json(rater);
      out["model_id"] = model_id;
      out["items"] = std::move(items);
      send_json(res, 200, out);
    });

    server.Get("/api/progress", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string rater = rater_of(req);
      if (rater.empty()) throw Error(Errc::BadRequest, kModule, "rater missing (X-Rater header or ?rater=)");
      std::lock_guard lock(mu);
      send_json(res, 200, progress_json(rater));
    });

    server.Post("/api/verdicts", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw Error(Errc::BadRequest, kModule, "verdict body is not valid JSON");
      const bool revise = body.is_object() && body.value("revise", false);
      auto incoming = verdicts_from_body(req, body);
      std::lock_guard lock(mu);
      for (const auto& v : incoming) {
        for (const auto& existing : verdicts) {
          if (existing.sample_id == v.sample_id && existing.rater_id == v.rater_id && existing.round == v.round &&
              existing.kind == v.kind && !revise) {
            throw Error(Errc::DuplicateVerdict, kModule,
                        "rater " + v.rater_id + " already has a " + std::string(to_string(v.kind)) +
                            " verdict for " + v.sample_id + " (send \"revise\": true to replace it)",
                        std::nullopt, v.sample_id);
          }
        }
      }
      const fs::path file = run_directory(opts.runs_dir, run_id) / artifact_file(Artifact::Verdicts);
      {
        JsonlAppender out(file);
        for (const auto& v : incoming) out.append(verdict_to_record(v));
      }
      refresh_artifact(opts.runs_dir, run_id, Artifact::Verdicts);
      const std::string rater = incoming.front().rater_id;
      json acked = json::array();
      for (auto& v : incoming) {
        auto it = std::find_if(verdicts.begin(), verdicts.end(), [&](const JudgeVerdict& e) {
          return e.sample_id == v.sample_id && e.rater_id == v.rater_id && e.round == v.round && e.kind == v.kind;
        });
        acked.push_back(verdict_to_record(v));
        if (it != verdicts.end()) *it = std::move(v);
        else verdicts.push_back(std::move(v));
      }
      send_json(res, 201, {{"verdicts", acked}, {"progress", progress_json(rater)}});
    });

    server.Get("/api/agreement", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<JudgeVerdict> snapshot;
      {
        std::lock_guard lock(mu);
        snapshot = verdicts;
      }
      json arr = json::array();
      for (const auto& a : agreement_matrix(reasoning_score_vectors(snapshot))) arr.push_back(a.to_json());
      send_json(res, 200, {{"results", arr}});
    });

    server.Get(R"(/api/media/(image|audio)/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string kind = req.matches[1];
      const std::string rel = req.matches[2];
      const fs::path& root = kind == "image" ? opts.dataset_root : opts.audio_root;
      auto path = contained(root, rel);
      if (!path) throw Error(Errc::NotFound, kModule, kind + " \"" + rel + "\" not found");
      res.set_content(read_file(*path), media_type(*path));
    });
  }
};

ReviewServer::ReviewServer(ServeOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->opts = std::move(options);
  impl_->load();
  impl_->install();
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::start(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else if (impl_->server.bind_to_port(host, port)) {
    impl_->port = port;
  }
  if (impl_->port <= 0) throw Error(Errc::IoError, kModule, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ReviewServer::listen(const std::string& host, int port) {
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw Error(Errc::IoError, kModule, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void ReviewServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ReviewServer::port() const { return impl_->port; }

}  // namespace medvqa
