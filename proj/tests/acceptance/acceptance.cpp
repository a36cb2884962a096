// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned below.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "medvqa/asr.hpp"
#include "medvqa/cli.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/inference.hpp"
#include "medvqa/judge.hpp"
#include "medvqa/mock_services.hpp"
#include "medvqa/reporting.hpp"
#include "medvqa/stats.hpp"
#include "medvqa/text_metrics.hpp"
#include "medvqa/tts.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace medvqa;
namespace fs = std::filesystem;

namespace {

constexpr double kPercentTol = 0.1;   // percentage points
constexpr double kMetricTol = 1e-9;
constexpr double kAccountingSeconds = 1.0;
constexpr double kAsrSeconds = 5.0;
constexpr double kEndToEndSeconds = 60.0;

// Collects failed sub-checks for one criterion.
struct Checks {
  std::vector<std::string> failed;
  void expect(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
};

int run(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "medvqa");
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Prediction> answer_predictions(const DatasetManifest& m) {
  std::vector<Prediction> out;
  for (const auto& s : m.samples()) {
    Prediction p;
    p.sample_id = s.id;
    p.model_id = "vlm";
    p.prediction = s.answer_text;
    out.push_back(p);
  }
  return out;
}

// ---- criteria ---------------------------------------------------------------

void dataset_accounting(Checks& c) {
  const auto m = reference_manifest();
  const auto& n = m.counts();
  auto pct = [&](Modality mod) { return 100.0 * n.by_modality.at(mod) / n.total; };
  c.expect(n.total == 866, "total 866");
  c.expect(std::abs(pct(Modality::Mri) - 22.4) <= kPercentTol, "MRI 22.4%");
  c.expect(std::abs(pct(Modality::Ct) - 16.5) <= kPercentTol, "CT 16.5%");
  c.expect(std::abs(pct(Modality::Xray) - 61.1) <= kPercentTol, "X-ray 61.1%");
  c.expect(n.by_split.at(Split::Train) == 716 && n.by_split.at(Split::Test) == 150, "train/test 716/150");
  c.expect(n.by_split_modality.at({Split::Test, Modality::Mri}) == 32 &&
               n.by_split_modality.at({Split::Test, Modality::Ct}) == 21 &&
               n.by_split_modality.at({Split::Test, Modality::Xray}) == 97,
           "test split 32/21/97");

  testing::TempDir dir;
  write_fixture_dataset(dir.path(), true);
  const auto t0 = std::chrono::steady_clock::now();
  std::string out;
  const int code = run({"--dataset-root", dir.path().string(), "validate", "--manifest",
                        (dir / "manifest.jsonl").string(), "--counts", (dir / "counts.jsonl").string()},
                       &out);
  const double secs = seconds_since(t0);
  c.expect(code == kExitOk, "validate exit 0");
  c.expect(out.find("FAIL") == std::string::npos, "all tallies pass");
  c.expect(secs < kAccountingSeconds, "validate under 1 s (" + format_fixed(secs, 3) + " s)");
}

void asr_oracle(Checks& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(641);
  for (int i = 0; i < 200; ++i) {
    auto ref = testing::random_tokens(rng, 10);
    const auto hyp = testing::random_tokens(rng, 10);
    if (ref.empty()) ref.push_back("z");
    const std::string r = testing::join(ref), h = testing::join(hyp);
    const double w = wer({"p", r, h});
    c.expect(w == static_cast<double>(oracle::edit_distance(ref, hyp)) / ref.size(), "WER pair " + std::to_string(i));
    std::vector<std::string> rc, hc;
    for (char ch : r) rc.emplace_back(1, ch);
    for (char ch : h) hc.emplace_back(1, ch);
    c.expect(cer({"p", r, h}) == static_cast<double>(oracle::edit_distance(rc, hc)) / rc.size(),
             "CER pair " + std::to_string(i));
  }
  c.expect(wer({"f", "the cat sat on the mat", "the cat sit on mat"}) == 2.0 / 6.0, "cat sat WER 2/6");
  c.expect(cer({"f", "abc", "axc"}) == 1.0 / 3.0, "CER abc/axc 1/3");
  const double secs = seconds_since(t0);
  c.expect(secs < kAsrSeconds, "under 5 s (" + format_fixed(secs, 3) + " s)");
}

void text_metric_oracles(Checks& c) {
  const Tokens t = metric_tokens("there is a mass in the left lung");
  c.expect(bleu({t}, t) == 1.0, "BLEU identity 1.0");
  c.expect(bleu({t}, {}) == 0.0, "BLEU empty 0.0");

  const Tokens ref = metric_tokens("the cat sat on the mat");
  const Tokens hyp = metric_tokens("the cat sat on mat");
  c.expect(std::abs(bleu({ref}, hyp) - oracle::bleu(ref, hyp)) < kMetricTol, "6-token BLEU vs enumeration");
  c.expect(std::abs(bleu({ref}, hyp) - 0.578930) < 1e-6, "6-token BLEU frozen value");

  const RougeScore rl = rouge_l(metric_tokens("a b c d"), metric_tokens("a c d"));
  c.expect(std::abs(rl.f1 - 6.0 / 7.0) < kMetricTol, "ROUGE-L 6/7");

  std::mt19937 rng(642);
  for (int i = 0; i < 100; ++i) {
    const auto a = testing::random_tokens(rng, 12);
    const auto b = testing::random_tokens(rng, 12);
    c.expect(lcs_length(a, b) == oracle::lcs(a, b), "LCS pair " + std::to_string(i));
  }
}

void correlation_properties(Checks& c) {
  std::mt19937 rng(643);
  std::uniform_real_distribution<double> d(-100, 100);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(2 + i % 30), up, down, y, cubed;
    for (auto& v : x) v = d(rng);
    for (double v : x) {
      up.push_back(3 * v + 1);
      down.push_back(-2 * v);
      const double w = d(rng);
      y.push_back(w);
      cubed.push_back(w * w * w);
    }
    const auto pu = pearson(x, up), pd = pearson(x, down);
    c.expect(pu.defined() && std::abs(pu.value() - 1.0) < kMetricTol, "pearson(x, 3x+1) = 1");
    c.expect(pd.defined() && std::abs(pd.value() + 1.0) < kMetricTol, "pearson(x, -2x) = -1");
    const auto s1 = spearman(x, y), s2 = spearman(x, cubed);
    c.expect(s1.defined() == s2.defined() && (!s1.defined() || std::abs(s1.value() - s2.value()) < kMetricTol),
             "spearman invariant under cubing");
  }
  const std::vector<double> tx{1, 2, 2, 3}, ty{1, 2, 3, 4};
  const double expected = oracle::pearson(oracle::ranks(tx), oracle::ranks(ty));
  c.expect(std::abs(spearman(tx, ty).value() - expected) < kMetricTol, "tie fixture");
  const std::vector<double> flat{5, 5, 5, 5};
  c.expect(pearson(flat, ty).is_degenerate() && !pearson(flat, ty).get(), "constant pearson DEGENERATE");
  c.expect(spearman(ty, flat).is_degenerate() && !spearman(ty, flat).get(), "constant spearman DEGENERATE");
}

void judge_protocol(Checks& c) {
  MockServices mock;
  mock.start();
  mock.set_chat_handler([](const MockChatRequest& req) {
    static const int script[] = {3, 3, 2};
    return "{\"level\": " + std::to_string(script[req.index % 3]) + ", \"rationale\": \"scripted\"}";
  });
  const auto m = demo_manifest(20);
  const auto preds = answer_predictions(m);
  JudgeClientConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.model_name = "judge-a";
  cfg.max_in_flight = 1;  // keeps the scripted order per sample
  testing::TempDir dir;
  JudgeRunOptions opts;
  opts.judge_structure = false;
  opts.verdicts_path = dir / "verdicts.jsonl";

  const auto full = judge_run(m, preds, cfg, opts);
  c.expect(mock.calls("chat") == 60 && full.reasoning_calls == 60, "60 reasoning calls");

  // interrupted run: 30 complete records and a torn one
  std::ifstream in(*opts.verdicts_path);
  std::string kept, line;
  for (int i = 0; i < 30 && std::getline(in, line); ++i) kept += line + "\n";
  std::getline(in, line);
  kept += line.substr(0, line.size() / 3);
  in.close();
  std::ofstream(*opts.verdicts_path, std::ios::trunc) << kept;
  mock.reset_counters();
  const auto resumed = judge_run(m, preds, cfg, opts);
  c.expect(mock.calls("chat") == 30, "resume issues only the remaining 30");
  c.expect(resumed.verdicts.size() == 60, "resumed run holds 60 verdicts");

  const auto agg = aggregate_rubric(resumed.verdicts, "judge-a");
  bool all_fc = !agg.per_sample.empty();
  for (const auto& s : agg.per_sample) {
    all_fc = all_fc && s.levels == std::vector<int>{3, 3, 2} && format_fixed(s.mean_level, 2) == "2.67" &&
             s.bucket == RubricLevel::FullyCorrect;
  }
  c.expect(all_fc, "(3,3,2) -> 2.67, Fully Correct");

  RunBundle b;
  b.rubric = {agg};
  double total = -1;
  for (const auto& t : build_report_tables(b)) {
    if (t.id != "reasoning_levels") continue;
    double sum = 0;
    for (const auto& row : t.rows) {
      if (row.size() > 1 && row[0].text.size() > 2 && std::isdigit(static_cast<unsigned char>(row[0].text[0]))) {
        sum += row[1].value.get<double>();
      }
    }
    total = sum;
  }
  c.expect(total == 20, "rubric table counts sum to 20");

  const std::string prompt = build_reasoning_prompt(m.samples()[0], preds[0]);
  bool verbatim = true;
  for (auto l : kRubricLevels) verbatim = verbatim && !level_definition(l).empty() && prompt.find(level_definition(l)) != std::string::npos;
  c.expect(verbatim, "prompt carries all four level definitions");
  mock.stop();
}

void client_robustness(Checks& c) {
  MockServices mock;
  mock.start();
  testing::TempDir dir;
  write_fixture_dataset(dir.path(), false, 20);
  const auto m = load_manifest(dir / "manifest.jsonl");

  VoiceConfig voice;
  voice.provider_base_url = mock.base_url();
  voice.retry = {3, std::chrono::milliseconds(1), std::chrono::milliseconds(4)};
  {
    SpeechSynthesizer cold(voice, dir / "cache");
    synthesize_manifest(m, cold, 4);
  }
  mock.reset_counters();
  SpeechSynthesizer warm(voice, dir / "cache");
  const auto voiced = synthesize_manifest(m, warm, 4);
  c.expect(mock.calls("synthesize") == 0 && voiced.report.complete(), "warm cache: zero TTS calls");

  mock.reset_counters();
  mock.fail_next("synthesize", 2);
  SpeechSynthesizer flaky(voice, dir / "cache-flaky");
  flaky.synthesize("is the lesion enhancing");
  c.expect(mock.calls("synthesize") == 3, "two failures then success: 3 calls");
  mock.reset_counters();
  mock.fail_next("synthesize", 100);
  bool gave_up = false;
  try {
    flaky.synthesize("is the lesion calcified");
  } catch (const Error& e) {
    gave_up = e.code() == Errc::ProviderUnavailable;
  }
  c.expect(gave_up && mock.calls("synthesize") == 4, "budget of 1 + 3 attempts then PROVIDER_UNAVAILABLE");
  mock.fail_next("synthesize", 0);

  InferenceEndpointConfig inf;
  inf.base_url = mock.base_url();
  inf.model_id = "vlm";
  inf.backoff = std::chrono::milliseconds(1);
  inf.max_in_flight = 2;
  mock.set_delay("infer", std::chrono::milliseconds(15));
  mock.reset_counters();
  const auto out = dir / "predictions.jsonl";
  run_inference(voiced.manifest, inf, dir.path(), dir / "cache", out);
  c.expect(mock.calls("infer") == 20, "20 inference requests");
  c.expect(mock.max_in_flight("infer") <= 2, "max_in_flight=2 never exceeded (peak " +
                                                 std::to_string(mock.max_in_flight("infer")) + ")");

  std::ifstream in(out);
  std::string kept, line;
  for (int i = 0; i < 11 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(out, std::ios::trunc) << kept;
  mock.reset_counters();
  run_inference(voiced.manifest, inf, dir.path(), dir / "cache", out);
  c.expect(mock.calls("infer") == 9, "resume issues only the 9 missing requests");
  mock.reset_counters();
  run_inference(voiced.manifest, inf, dir.path(), dir / "cache", out);
  c.expect(mock.calls("infer") == 0, "complete resume issues none");
  c.expect(load_predictions(out).size() == 20, "no duplicate predictions");
  mock.stop();
}

// Runs the whole chain in a fresh directory and returns the rendered reports.
std::vector<std::string> pipeline_once(Checks& c, MockServices& mock, const fs::path& root) {
  write_fixture_dataset(root / "data", false, 20);
  const json cfg = {{"dataset_root", (root / "data").string()},
                    {"cache_dir", (root / "cache").string()},
                    {"runs_dir", (root / "runs").string()},
                    {"voice", {{"provider_base_url", mock.base_url()}}},
                    {"embedding", {{"base_url", mock.base_url()}, {"dimension", 64}}},
                    {"inference", {{"base_url", mock.base_url()}, {"model_id", "demo-vlm"}, {"input_mode", "speech"}}},
                    {"judges", json::array({{{"base_url", mock.base_url()}, {"model_name", "judge-a"}},
                                            {{"base_url", mock.base_url()}, {"model_name", "judge-b"}}})}};
  std::ofstream(root / "config.json") << cfg.dump(2);
  std::string out, err;
  const int code = run({"--config", (root / "config.json").string(), "--run", "e2e", "pipeline", "--manifest",
                        (root / "data/manifest.jsonl").string(), "--counts", (root / "data/counts.jsonl").string()},
                       &out, &err);
  c.expect(code == kExitOk, "pipeline exit 0" + (code ? " (" + err + ")" : std::string()));
  std::vector<std::string> reports;
  for (const char* f : {"report.md", "report.csv", "report.json"}) {
    const fs::path p = root / "runs/e2e" / f;
    reports.push_back(fs::exists(p) ? read_file(p) : std::string());
  }
  return reports;
}

void end_to_end(Checks& c) {
  const auto t0 = std::chrono::steady_clock::now();
  MockServices mock;
  mock.start();
  mock.use_manifest_answers(demo_manifest(20));
  testing::TempDir a, b;
  const auto first = pipeline_once(c, mock, a.path());
  const auto second = pipeline_once(c, mock, b.path());
  mock.stop();

  c.expect(first == second, "reports byte-identical across runs");
  const json machine = json::parse(first[2], nullptr, false);
  for (const char* id : {"text_similarity", "structure", "reasoning_levels", "open_closed_accuracy",
                         "accuracy_bleu_similarity", "agreement"}) {
    bool present = false;
    if (machine.is_object()) {
      for (const auto& t : machine.value("tables", json::array())) {
        if (t.value("id", "") == id && !t.value("rows", json::array()).empty()) present = true;
      }
    }
    c.expect(present, std::string("table ") + id + " populated");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < kEndToEndSeconds, "under 60 s (" + format_fixed(secs, 2) + " s)");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria = {
      {"dataset-accounting", dataset_accounting},
      {"asr-metric-oracle", asr_oracle},
      {"text-metric-oracles", text_metric_oracles},
      {"correlation-properties", correlation_properties},
      {"judge-protocol", judge_protocol},
      {"client-robustness", client_robustness},
      {"end-to-end-dry-run", end_to_end},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Checks c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.failed.push_back(std::string("threw: ") + e.what());
    }
    const double secs = seconds_since(t0);
    const bool ok = c.failed.empty();
    failures += !ok;
    std::cout << (ok ? "PASS " : "FAIL ") << name << " (" << format_fixed(secs, 3) << " s)";
    if (!ok) {
      std::cout << ":";
      for (std::size_t i = 0; i < c.failed.size() && i < 5; ++i) std::cout << (i ? "; " : " ") << c.failed[i];
      if (c.failed.size() > 5) std::cout << "; +" << c.failed.size() - 5 << " more";
    }
    std::cout << "\n";
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
