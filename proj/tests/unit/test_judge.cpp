#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>

#include "medvqa/error.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/judge.hpp"
#include "medvqa/mock_services.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

std::vector<Prediction> predictions_for(const DatasetManifest& m, const std::string& model = "vlm") {
  std::vector<Prediction> out;
  for (const auto& s : m.samples()) {
    Prediction p;
    p.sample_id = s.id;
    p.model_id = model;
    p.prediction = s.answer_text;
    out.push_back(p);
  }
  return out;
}

JudgeClientConfig judge_config(const MockServices& mock, const std::string& name = "judge-a") {
  JudgeClientConfig c;
  c.base_url = mock.base_url();
  c.model_name = name;
  c.backoff = std::chrono::milliseconds(1);
  c.max_in_flight = 4;
  return c;
}

JudgeVerdict reasoning(const std::string& id, const std::string& rater, int round, int level) {
  JudgeVerdict v;
  v.sample_id = id;
  v.rater_id = rater;
  v.round = round;
  v.kind = VerdictKind::Reasoning;
  v.level = level_from_value(level);
  return v;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_SUITE("judge") {

TEST_CASE("level definitions appear verbatim in reasoning prompts") {
  const auto m = demo_manifest(3);
  const auto preds = predictions_for(m);
  const std::string prompt = build_reasoning_prompt(m.samples()[0], preds[0]);
  for (auto l : kRubricLevels) {
    CHECK(prompt.find(level_definition(l)) != std::string::npos);
    CHECK(prompt.find(level_label(l)) != std::string::npos);
  }
  CHECK(prompt.find(m.samples()[0].question_text) != std::string::npos);
}

TEST_CASE("structure prompts carry both criteria") {
  const auto m = demo_manifest(3);
  const std::string prompt = build_structure_prompt(m.samples()[0], predictions_for(m)[0]);
  for (auto c : kStructureCriteria) CHECK(prompt.find(c) != std::string::npos);
}

TEST_CASE("prompt fields are escaped so predictions cannot inject placeholders") {
  const auto m = demo_manifest(1);
  auto p = predictions_for(m)[0];
  p.prediction = "He said \"{{rubric}}\" twice.";
  const std::string prompt = build_reasoning_prompt(m.samples()[0], p);
  CHECK(prompt.find(R"(\"{{rubric}}\")") != std::string::npos);
}

TEST_CASE("render and parse round trip") {
  std::mt19937 rng(17);
  const std::vector<std::string> words = {"the", "answer", "is", "\"quoted\"", "{brace}", "ok.", "line\nbreak"};
  for (int i = 0; i < 200; ++i) {
    PartialVerdict v;
    v.kind = i % 2 ? VerdictKind::Reasoning : VerdictKind::Structure;
    if (v.kind == VerdictKind::Reasoning) v.level = kRubricLevels[rng() % 4];
    else v.structure_ok = rng() % 2 == 0;
    for (int k = 0; k < 4; ++k) v.rationale += words[rng() % words.size()] + " ";
    CHECK(parse_verdict(render_verdict(v), v.kind) == v);
  }
}

TEST_CASE("parser accepts loose replies") {
  CHECK(parse_verdict(R"(Sure. {"level": 2, "rationale": "close"})", VerdictKind::Reasoning).level ==
        RubricLevel::PartiallyCorrect);
  CHECK(parse_verdict("**Level:** 3\nRationale: fine", VerdictKind::Reasoning).level == RubricLevel::FullyCorrect);
  CHECK(parse_verdict(R"({"Structure": "PASS"})", VerdictKind::Structure).structure_ok == true);
  CHECK(parse_verdict("structure: fail", VerdictKind::Structure).structure_ok == false);
  CHECK(parse_verdict(R"({"level": "1"})", VerdictKind::Reasoning).level == RubricLevel::SignificantlyIncorrect);
}

TEST_CASE("parser rejects bad replies") {
  auto code = [](std::string_view raw, VerdictKind k) {
    try {
      parse_verdict(raw, k);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::BadRequest;
  };
  CHECK(code("I think it is mostly right.", VerdictKind::Reasoning) == Errc::Unparseable);
  CHECK(code(R"({"level": 5})", VerdictKind::Reasoning) == Errc::OutOfRangeLevel);
  CHECK(code(R"({"level": -1})", VerdictKind::Reasoning) == Errc::OutOfRangeLevel);
  CHECK(code(R"({"structure": "maybe"})", VerdictKind::Structure) == Errc::Unparseable);
}

TEST_CASE("verdict records validate their invariants") {
  CHECK_THROWS_AS(verdict_from_record({{"sample_id", "a"}, {"rater_id", "r"}, {"round", 0}, {"kind", "reasoning"}, {"level", 1}}),
                  Error);
  CHECK_THROWS_AS(verdict_from_record({{"sample_id", "a"}, {"rater_id", "r"}, {"round", 1}, {"kind", "reasoning"}, {"level", 4}}),
                  Error);
  const auto v = reasoning("a", "r", 2, 1);
  CHECK(verdict_from_record(verdict_to_record(v)) == v);
}

TEST_CASE("twenty samples and three rounds issue sixty reasoning calls") {
  MockServices mock;
  mock.start();
  const auto m = demo_manifest(20);
  JudgeRunOptions opts;
  opts.judge_structure = false;
  const auto r = judge_run(m, predictions_for(m), judge_config(mock), opts);
  CHECK(mock.calls("chat") == 60);
  CHECK(r.reasoning_calls == 60);
  CHECK(r.structure_calls == 0);
  CHECK(r.verdicts.size() == 60);
  CHECK(r.report.complete());
  const auto agg = aggregate_rubric(r.verdicts, "judge-a");
  std::size_t sum = 0;
  for (auto c : agg.bucket_counts) sum += c;
  CHECK(sum == 20);
  double mean_sum = 0;
  for (auto c : agg.mean_counts) mean_sum += c;
  CHECK(mean_sum == doctest::Approx(20.0));
  mock.stop();
}

TEST_CASE("resume after an interrupted run issues only the remainder") {
  MockServices mock;
  mock.start();
  testing::TempDir dir;
  const auto m = demo_manifest(20);
  JudgeRunOptions opts;
  opts.judge_structure = false;
  opts.verdicts_path = dir / "verdicts.jsonl";
  judge_run(m, predictions_for(m), judge_config(mock), opts);
  REQUIRE(line_count(*opts.verdicts_path) == 60);

  // keep 25 complete lines and a torn 26th, as if killed mid-append
  std::ifstream in(*opts.verdicts_path);
  std::string kept, line;
  for (int i = 0; i < 25 && std::getline(in, line); ++i) kept += line + "\n";
  std::getline(in, line);
  kept += line.substr(0, line.size() / 2);
  in.close();
  std::ofstream(*opts.verdicts_path, std::ios::trunc) << kept;

  mock.reset_counters();
  const auto r = judge_run(m, predictions_for(m), judge_config(mock), opts);
  CHECK(mock.calls("chat") == 35);
  CHECK(r.verdicts.size() == 60);
  CHECK(load_verdicts(*opts.verdicts_path).size() == 60);

  mock.reset_counters();
  const auto again = judge_run(m, predictions_for(m), judge_config(mock), opts);
  CHECK(mock.calls("chat") == 0);
  CHECK(again.report.skipped == again.report.total);
  mock.stop();
}

TEST_CASE("scripted levels 3, 3, 2 aggregate to bucket Fully Correct") {
  std::vector<JudgeVerdict> v = {reasoning("s", "r", 1, 3), reasoning("s", "r", 2, 3), reasoning("s", "r", 3, 2)};
  const auto agg = aggregate_rubric(v, "r");
  REQUIRE(agg.per_sample.size() == 1);
  CHECK(agg.per_sample[0].mean_level == doctest::Approx(8.0 / 3.0));
  CHECK(format_fixed(agg.per_sample[0].mean_level, 2) == "2.67");
  CHECK(agg.per_sample[0].bucket == RubricLevel::FullyCorrect);
  CHECK(agg.bucket_counts[3] == 1);
  CHECK(agg.mean_counts[3] == doctest::Approx(2.0 / 3.0));
  CHECK(agg.mean_counts[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("scripted judge through the mock endpoint") {
  MockServices mock;
  mock.start();
  std::atomic<int> n{0};
  mock.set_chat_handler([&](const MockChatRequest& req) {
    if (req.kind == VerdictKind::Structure) return std::string(R"({"structure": "pass"})");
    static const int script[] = {3, 3, 2};
    return "{\"level\": " + std::to_string(script[n++ % 3]) + "}";
  });
  const auto m = demo_manifest(1);
  auto cfg = judge_config(mock);
  cfg.max_in_flight = 1;
  const auto r = judge_run(m, predictions_for(m), cfg);
  const auto agg = aggregate_rubric(r.verdicts, "judge-a");
  CHECK(agg.mean_level == doctest::Approx(8.0 / 3.0));
  CHECK(agg.bucket_counts[3] == 1);
  CHECK(agg.structure_passes == 1);
  mock.stop();
}

TEST_CASE("bucket rounding is half up") {
  CHECK(bucket_for_mean(0.49) == RubricLevel::CompletelyIncorrect);
  CHECK(bucket_for_mean(0.5) == RubricLevel::SignificantlyIncorrect);
  CHECK(bucket_for_mean(1.5) == RubricLevel::PartiallyCorrect);
  CHECK(bucket_for_mean(2.5) == RubricLevel::FullyCorrect);
  CHECK(bucket_for_mean(3.0) == RubricLevel::FullyCorrect);
}

TEST_CASE("unparseable replies are retried within the budget") {
  MockServices mock;
  mock.start();
  mock.set_chat_handler([](const MockChatRequest& req) {
    return req.index < 2 ? std::string("hmm, hard to say") : std::string(R"({"level": 1})");
  });
  const auto m = demo_manifest(1);
  auto cfg = judge_config(mock);
  cfg.max_retries = 2;
  JudgeRunOptions opts;
  opts.rounds = 1;
  opts.judge_structure = false;
  const auto r = judge_run(m, predictions_for(m), cfg, opts);
  CHECK(mock.calls("chat") == 3);
  CHECK(r.report.complete());
  mock.stop();
}

TEST_CASE("exhausted budget records an item failure") {
  MockServices mock;
  mock.start();
  mock.fail_next("chat", 100);
  const auto m = demo_manifest(2);
  auto cfg = judge_config(mock);
  cfg.max_retries = 1;
  cfg.max_in_flight = 1;
  JudgeRunOptions opts;
  opts.judge_structure = false;
  const auto r = judge_run(m, predictions_for(m), cfg, opts);
  CHECK(mock.calls("chat") == 4);  // 2 samples, first round only, 2 attempts each
  CHECK(r.report.failures.size() == 2);
  CHECK_FALSE(r.report.complete());
  mock.stop();
}

TEST_CASE("empty predictions score zero without a call") {
  MockServices mock;
  mock.start();
  const auto m = demo_manifest(1);
  auto preds = predictions_for(m);
  preds[0].prediction.clear();
  const auto r = judge_run(m, preds, judge_config(mock));
  CHECK(mock.calls("chat") == 0);
  REQUIRE(r.verdicts.size() == 6);
  for (const auto& v : r.verdicts) {
    if (v.kind == VerdictKind::Reasoning) CHECK(v.level == RubricLevel::CompletelyIncorrect);
    else CHECK(v.structure_ok == false);
  }
  mock.stop();
}

TEST_CASE("predictions for unknown samples are rejected") {
  MockServices mock;
  mock.start();
  const auto m = demo_manifest(2);
  auto preds = predictions_for(m);
  preds[0].sample_id = "nope";
  CHECK_THROWS_AS(judge_run(m, preds, judge_config(mock)), Error);
  mock.stop();
}

TEST_CASE("templates save and load") {
  testing::TempDir dir;
  PromptTemplates t = PromptTemplates::defaults();
  t.system = "Be strict.";
  t.save(dir.path());
  const auto back = PromptTemplates::load(dir.path());
  CHECK(back.system == "Be strict.");
  CHECK(back.reasoning == t.reasoning);
}

TEST_CASE("shipped templates match the built-in defaults") {
  const auto shipped = PromptTemplates::load(fs::path(MEDVQA_SOURCE_DIR) / "templates");
  const auto defaults = PromptTemplates::defaults();
  CHECK(shipped.system == defaults.system);
  CHECK(shipped.reasoning == defaults.reasoning);
  CHECK(shipped.structure == defaults.structure);
}

TEST_CASE("identical raters give perfect reasoning agreement") {
  std::vector<JudgeVerdict> v;
  const int levels[] = {0, 1, 2, 3, 2, 1};
  for (int i = 0; i < 6; ++i) {
    v.push_back(reasoning("s" + std::to_string(i), "a", 1, levels[i]));
    v.push_back(reasoning("s" + std::to_string(i), "b", 1, levels[i]));
  }
  const auto vecs = reasoning_score_vectors(v);
  REQUIRE(vecs.size() == 2);
  const auto r = agreement(vecs[0], vecs[1]);
  CHECK(r.pearson_r.value() == doctest::Approx(1.0));
  CHECK(r.spearman_rho.value() == doctest::Approx(1.0));
}

}  // TEST_SUITE
