#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "medvqa/error.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/inference.hpp"
#include "medvqa/mock_services.hpp"
#include "medvqa/tts.hpp"
#include "medvqa/wav.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

VoiceConfig voice(const std::string& url, int retries = 3) {
  VoiceConfig v;
  v.provider_base_url = url;
  v.retry.max_retries = retries;
  v.retry.base_delay = std::chrono::milliseconds(1);
  v.retry.max_delay = std::chrono::milliseconds(2);
  return v;
}

Errc error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::BadRequest;
}

struct Dataset {
  testing::TempDir dir;
  DatasetManifest manifest;
  explicit Dataset(std::size_t n = 20) {
    write_fixture_dataset(dir.path(), false, n);
    manifest = load_manifest(dir / "manifest.jsonl");
  }
};

InferenceEndpointConfig endpoint(const MockServices& mock, InputMode mode) {
  InferenceEndpointConfig c;
  c.base_url = mock.base_url();
  c.model_id = "vlm";
  c.input_mode = mode;
  c.backoff = std::chrono::milliseconds(1);
  return c;
}

}  // namespace

TEST_SUITE("tts") {

TEST_CASE("wav header round trip") {
  const std::string wav = synth_tone_wav(16000, 250);
  const auto info = parse_wav(wav);
  REQUIRE(info);
  CHECK(info->is_pcm16_mono());
  CHECK(info->sample_rate == 16000);
  CHECK(info->duration_ms() == 250);
  CHECK_FALSE(parse_wav("RIFF1234WAVEjunk"));
  CHECK_FALSE(parse_wav("hello"));
}

TEST_CASE("cache key depends on text, voice and rate") {
  const auto k = tts_cache_key("is there a mass", "v1", 16000);
  CHECK(k == tts_cache_key("is there a mass", "v1", 16000));
  CHECK(k != tts_cache_key("is there a mass", "v2", 16000));
  CHECK(k != tts_cache_key("is there a mass", "v1", 22050));
  CHECK(k != tts_cache_key("is there a mass?", "v1", 16000));
  CHECK(tts_cache_path("c", k) == fs::path("c") / k.substr(0, 2) / (k + ".wav"));
}

TEST_CASE("warm cache rerun makes no provider calls") {
  MockServices mock;
  mock.start();
  testing::TempDir cache;
  const auto m = demo_manifest(20);
  {
    SpeechSynthesizer synth(voice(mock.base_url()), cache.path());
    const auto r = synthesize_manifest(m, synth, 4);
    CHECK(r.report.complete());
    CHECK(mock.calls("synthesize") > 0);
    for (const auto& s : r.manifest.samples()) {
      REQUIRE(s.audio_ref);
      CHECK(fs::exists(cache.path() / *s.audio_ref));
    }
  }
  mock.reset_counters();
  SpeechSynthesizer synth(voice(mock.base_url()), cache.path());
  const auto r = synthesize_manifest(m, synth, 4);
  CHECK(mock.calls("synthesize") == 0);
  CHECK(synth.requests_issued() == 0);
  CHECK(r.report.complete());
  mock.stop();
}

TEST_CASE("retry budget is honored") {
  MockServices mock;
  mock.start();
  testing::TempDir cache;
  SUBCASE("two failures then success") {
    mock.fail_next("synthesize", 2);
    SpeechSynthesizer synth(voice(mock.base_url(), 3), cache.path());
    const auto a = synth.synthesize("is there a fracture");
    CHECK(fs::exists(a.path));
    CHECK(mock.calls("synthesize") == 3);
  }
  SUBCASE("budget exhausted") {
    mock.fail_next("synthesize", 10);
    SpeechSynthesizer synth(voice(mock.base_url(), 2), cache.path());
    CHECK(error_code([&] { synth.synthesize("is there a fracture"); }) == Errc::ProviderUnavailable);
    CHECK(mock.calls("synthesize") == 3);
  }
  mock.stop();
}

TEST_CASE("non audio replies are rejected") {
  httplib::Server stub;
  stub.Post("/synthesize", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>oops</html>", "text/html");
  });
  const int port = stub.bind_to_any_port("127.0.0.1");
  std::thread t([&] { stub.listen_after_bind(); });
  testing::TempDir cache;
  SpeechSynthesizer synth(voice("http://127.0.0.1:" + std::to_string(port)), cache.path());
  CHECK(error_code([&] { synth.synthesize("hello"); }) == Errc::BadAudio);
  stub.stop();
  t.join();
}

TEST_CASE("concurrent requests for one text share a provider call") {
  MockServices mock;
  mock.start();
  mock.set_delay("synthesize", std::chrono::milliseconds(100));
  testing::TempDir cache;
  SpeechSynthesizer synth(voice(mock.base_url()), cache.path());
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&] { synth.synthesize("same question"); });
  for (auto& t : threads) t.join();
  CHECK(mock.calls("synthesize") == 1);
  mock.stop();
}

TEST_CASE("manifest synthesis respects max_in_flight") {
  MockServices mock;
  mock.start();
  mock.set_delay("synthesize", std::chrono::milliseconds(20));
  testing::TempDir cache;
  SpeechSynthesizer synth(voice(mock.base_url()), cache.path());
  synthesize_manifest(demo_manifest(20), synth, 2);
  CHECK(mock.max_in_flight("synthesize") <= 2);
  CHECK(mock.max_in_flight("synthesize") >= 1);
  mock.stop();
}

}  // TEST_SUITE

TEST_SUITE("inference") {

TEST_CASE("text mode sends the question and records predictions in order") {
  MockServices mock;
  mock.start();
  Dataset d;
  const auto r = run_inference(d.manifest, endpoint(mock, InputMode::Text), d.dir.path(), d.dir.path(),
                               d.dir / "predictions.jsonl");
  CHECK(r.report.complete());
  REQUIRE(r.predictions.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(r.predictions[i].sample_id == d.manifest.samples()[i].id);
    CHECK(r.predictions[i].prediction == d.manifest.samples()[i].question_text);
    CHECK(r.predictions[i].input_mode == InputMode::Text);
  }
  CHECK(load_predictions(d.dir / "predictions.jsonl") == r.predictions);
  mock.stop();
}

TEST_CASE("speech mode without audio fails before any request") {
  MockServices mock;
  mock.start();
  Dataset d;
  try {
    run_inference(d.manifest, endpoint(mock, InputMode::Speech), d.dir.path(), d.dir.path(), d.dir / "p.jsonl");
    FAIL("expected MISSING_AUDIO");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingAudio);
    CHECK(e.subject() == d.manifest.samples()[0].id);
  }
  CHECK(mock.calls("infer") == 0);
  mock.stop();
}

TEST_CASE("speech mode uploads synthesized audio") {
  MockServices mock;
  mock.start();
  Dataset d(4);
  SpeechSynthesizer synth(voice(mock.base_url()), d.dir / "cache");
  const auto voiced = synthesize_manifest(d.manifest, synth, 2).manifest;
  std::size_t audio_parts = 0;
  mock.set_infer_handler([&](const MockInferRequest& req) {
    if (req.audio_bytes > 44 && !req.question) ++audio_parts;
    return std::string("Yes. It looks fine.");
  });
  auto cfg = endpoint(mock, InputMode::Speech);
  cfg.max_in_flight = 1;
  const auto r = run_inference(voiced, cfg, d.dir.path(), d.dir / "cache", d.dir / "p.jsonl");
  CHECK(r.report.complete());
  CHECK(audio_parts == 4);
  mock.stop();
}

TEST_CASE("resume issues no duplicate requests") {
  MockServices mock;
  mock.start();
  Dataset d;
  const auto out = d.dir / "predictions.jsonl";
  const auto cfg = endpoint(mock, InputMode::Text);
  run_inference(d.manifest, cfg, d.dir.path(), d.dir.path(), out);
  CHECK(mock.calls("infer") == 20);

  std::ifstream in(out);
  std::string kept, line;
  for (int i = 0; i < 12 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(out, std::ios::trunc) << kept << "{\"sample_id\": \"tor";

  mock.reset_counters();
  const auto r = run_inference(d.manifest, cfg, d.dir.path(), d.dir.path(), out);
  CHECK(mock.calls("infer") == 8);
  CHECK(r.report.skipped == 12);
  CHECK(load_predictions(out).size() == 20);

  mock.reset_counters();
  run_inference(d.manifest, cfg, d.dir.path(), d.dir.path(), out);
  CHECK(mock.calls("infer") == 0);
  mock.stop();
}

TEST_CASE("max_in_flight=2 is never exceeded") {
  MockServices mock;
  mock.start();
  mock.set_delay("infer", std::chrono::milliseconds(20));
  Dataset d;
  auto cfg = endpoint(mock, InputMode::Text);
  cfg.max_in_flight = 2;
  run_inference(d.manifest, cfg, d.dir.path(), d.dir.path(), d.dir / "p.jsonl");
  CHECK(mock.max_in_flight("infer") <= 2);
  CHECK(mock.max_in_flight("infer") == 2);
  mock.stop();
}

TEST_CASE("unavailable endpoint failures are collected per sample") {
  MockServices mock;
  mock.start();
  mock.set_unavailable("infer", true);
  Dataset d(3);
  auto cfg = endpoint(mock, InputMode::Text);
  cfg.max_retries = 1;
  const auto r = run_inference(d.manifest, cfg, d.dir.path(), d.dir.path(), d.dir / "p.jsonl");
  CHECK(r.report.failures.size() == 3);
  CHECK(r.report.failures[0].code == Errc::EndpointUnavailable);
  CHECK(mock.calls("infer") == 6);
  mock.stop();
}

TEST_CASE("reply parsing accepts JSON and plain text") {
  CHECK(parse_inference_reply({200, R"({"prediction": "Yes."})", "application/json"}) == "Yes.");
  CHECK(parse_inference_reply({200, "No. Clear lungs.", "text/plain"}) == "No. Clear lungs.");
}

}  // TEST_SUITE
