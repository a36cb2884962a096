#include "medvqa/cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "medvqa/asr.hpp"
#include "medvqa/config.hpp"
#include "medvqa/dataset.hpp"
#include "medvqa/fixtures.hpp"
#include "medvqa/inference.hpp"
#include "medvqa/judge.hpp"
#include "medvqa/mock_services.hpp"
#include "medvqa/reporting.hpp"
#include "medvqa/serve.hpp"
#include "medvqa/stats.hpp"
#include "medvqa/text_metrics.hpp"
#include "medvqa/tts.hpp"

namespace medvqa {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "cli";

struct Global {
  std::string config_path;
  std::vector<std::string> sets;
  std::string dataset_root;
  std::string cache_dir;
  std::string runs_dir;
  bool dry_run = false;
  bool json_out = false;
};

struct Context {
  Global g;
  HarnessConfig cfg;
  std::string run;
  std::ostream& out;
  std::ostream& err;

  fs::path run_file(Artifact a) const { return run_directory(cfg.runs_dir, run) / artifact_file(a); }

  fs::path input(const std::string& given, Artifact a, const std::string& flag) const {
    if (!given.empty()) return given;
    if (run.empty()) throw Error(Errc::ConfigError, kModule, flag + " or --run is required");
    return run_file(a);
  }

  fs::path output(const std::string& given, Artifact a, const std::string& flag) const {
    return input(given, a, flag);
  }

  // Registers a produced file with the run, copying it in when it lives elsewhere.
  void keep(Artifact a, const fs::path& produced) const {
    if (run.empty() || g.dry_run) return;
    create_run(cfg.runs_dir, run, cfg.to_json());
    set_run_config(cfg.runs_dir, run, cfg.to_json());
    std::error_code ec;
    if (fs::equivalent(produced, run_file(a), ec)) {
      refresh_artifact(cfg.runs_dir, run, a);
    } else {
      record_artifact(cfg.runs_dir, run, a, read_file(produced));
    }
  }

  void plan(const std::string& line) const { out << "[dry-run] " << line << "\n"; }
};

void print_error(std::ostream& err, const Error& e) {
  json rec = {{"code", e.qualified_code()}, {"module", e.module()}, {"message", e.what()}};
  if (e.line()) rec["line"] = *e.line();
  if (!e.subject().empty()) rec["subject"] = e.subject();
  err << json({{"error", rec}}).dump() << "\n";
}

json failures_json(const BatchReport& r) {
  json arr = json::array();
  for (const auto& f : r.failures) arr.push_back({{"id", f.id}, {"code", to_string(f.code)}, {"message", f.message}});
  return arr;
}

json batch_json(const BatchReport& r) {
  return {{"total", r.total},       {"succeeded", r.succeeded}, {"skipped", r.skipped},
          {"requests", r.requests}, {"coverage", r.coverage()}, {"failures", failures_json(r)}};
}

// Returns the exit code for a batch and reports failures on stderr.
int finish_batch(const Context& ctx, const std::string& module, const BatchReport& r) {
  if (r.failures.empty()) return kExitOk;
  json rec = {{"code", module + ".INCOMPLETE_COVERAGE"},
              {"module", module},
              {"message", std::to_string(r.failures.size()) + " of " + std::to_string(r.total) + " items failed"},
              {"failures", failures_json(r)}};
  ctx.err << json({{"error", rec}}).dump() << "\n";
  return kExitIncomplete;
}

NormalizationRuleSet load_rules(const std::string& path) {
  if (path.empty()) return {};
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ConfigError, kModule, "rules file " + path + " is not JSON");
  return NormalizationRuleSet::from_json(j);
}

struct ManifestFlags {
  std::string manifest;
  bool strict = false;
  bool no_answer_structure = false;
  std::string rules;
  std::string split = "test";
};

DatasetManifest load_for(const Context& ctx, const ManifestFlags& f) {
  LoadOptions opts;
  opts.strict = f.strict;
  opts.dataset_root = ctx.cfg.dataset_root;
  opts.rules = load_rules(f.rules);
  opts.require_answer_structure = !f.no_answer_structure;
  return load_manifest(ctx.input(f.manifest, Artifact::Manifest, "--manifest"), opts);
}

DatasetManifest subset(const DatasetManifest& m, const std::string& split) {
  const std::string s = to_lower(split);
  if (s == "all") return m;
  auto parsed = parse_split(s);
  if (!parsed) throw Error(Errc::ConfigError, kModule, "--split must be train, test or all");
  SampleFilter f;
  f.split = parsed;
  return DatasetManifest(m.name(), filter_samples(m, f));
}

// ---- commands -------------------------------------------------------------

struct ValidateFlags {
  ManifestFlags m;
  std::string counts;
};

int cmd_validate(Context& ctx, const ValidateFlags& f) {
  const DatasetManifest manifest = load_for(ctx, f.m);
  std::optional<CountReport> report;
  if (!f.counts.empty()) report = validate_counts(manifest, load_count_spec(f.counts));
  if (ctx.g.dry_run) {
    ctx.plan("loaded " + std::to_string(manifest.size()) + " samples from " + manifest.name());
    if (report) ctx.plan("would check " + std::to_string(report->checks.size()) + " tallies");
    if (!ctx.run.empty()) ctx.plan("would record the manifest in run " + ctx.run);
    return kExitOk;
  }
  const auto& c = manifest.counts();
  if (ctx.g.json_out) {
    json counts = {{"total", c.total}};
    for (auto m : kAllModalities) {
      counts["by_modality"][std::string(to_string(m))] = c.by_modality.count(m) ? c.by_modality.at(m) : 0;
    }
    for (auto s : kAllSplits) counts["by_split"][std::string(to_string(s))] = c.by_split.count(s) ? c.by_split.at(s) : 0;
    json out = {{"manifest", manifest.name()}, {"counts", counts}};
    if (report) out["checks"] = report->to_json();
    ctx.out << out.dump(2) << "\n";
  } else {
    ctx.out << "manifest " << manifest.name() << ": " << c.total << " samples";
    for (auto s : kAllSplits) {
      ctx.out << ", " << to_string(s) << " " << (c.by_split.count(s) ? c.by_split.at(s) : 0);
    }
    ctx.out << "\n";
    if (report) ctx.out << report->to_text();
  }
  if (!ctx.run.empty()) {
    create_run(ctx.cfg.runs_dir, ctx.run, ctx.cfg.to_json());
    record_artifact(ctx.cfg.runs_dir, ctx.run, Artifact::Manifest, serialize_manifest(manifest));
    set_run_config(ctx.cfg.runs_dir, ctx.run, ctx.cfg.to_json());
  }
  if (report && !report->all_pass()) {
    ctx.err << json({{"error",
                      {{"code", "dataset.COUNT_MISMATCH"},
                       {"module", "dataset"},
                       {"message", "one or more tallies differ from the count spec"},
                       {"checks", report->to_json()}}}})
                   .dump()
            << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct TtsFlags {
  ManifestFlags m;
  std::string out;
  std::size_t max_in_flight = 0;
};

int cmd_tts(Context& ctx, const TtsFlags& f) {
  const DatasetManifest manifest = load_for(ctx, f.m);
  const std::size_t limit = f.max_in_flight ? f.max_in_flight : ctx.cfg.tts_max_in_flight;
  if (ctx.g.dry_run) {
    std::size_t cached = 0;
    for (const auto& s : manifest.samples()) {
      const auto key = tts_cache_key(s.normalized_question_text, ctx.cfg.voice.voice_name, ctx.cfg.voice.sample_rate_hz);
      if (fs::exists(tts_cache_path(ctx.cfg.cache_dir, key))) ++cached;
    }
    ctx.plan("would synthesize " + std::to_string(manifest.size() - cached) + " of " +
             std::to_string(manifest.size()) + " questions (" + std::to_string(cached) + " cached) with voice " +
             ctx.cfg.voice.voice_name + " at " + std::to_string(ctx.cfg.voice.sample_rate_hz) + " Hz");
    ctx.plan("provider " + ctx.cfg.voice.provider_base_url + ", cache " + ctx.cfg.cache_dir.string() +
             ", max_in_flight " + std::to_string(limit));
    return kExitOk;
  }
  const fs::path out = ctx.output(f.out, Artifact::Manifest, "--out");
  SpeechSynthesizer synth(ctx.cfg.voice, ctx.cfg.cache_dir);
  SynthesisResult r = synthesize_manifest(manifest, synth, limit);
  write_manifest(out, r.manifest);
  ctx.keep(Artifact::Manifest, out);
  if (ctx.g.json_out) ctx.out << batch_json(r.report).dump(2) << "\n";
  else {
    ctx.out << "synthesized " << r.report.succeeded << ", cached " << r.report.skipped << ", failed "
            << r.report.failures.size() << " of " << r.report.total << " (" << synth.requests_issued()
            << " provider requests)\n";
  }
  return finish_batch(ctx, "tts", r.report);
}

struct InferFlags {
  ManifestFlags m;
  std::string out;
};

int cmd_infer(Context& ctx, const InferFlags& f) {
  const DatasetManifest manifest = subset(load_for(ctx, f.m), f.m.split);
  const auto& cfg = ctx.cfg.inference;
  cfg.validate();
  if (ctx.g.dry_run) {
    std::size_t have = 0;
    const fs::path out = ctx.output(f.out, Artifact::Predictions, "--out");
    if (fs::exists(out)) {
      std::set<std::string> ids;
      for (const auto& p : load_predictions(out)) {
        if (p.model_id == cfg.model_id && p.input_mode == cfg.input_mode) ids.insert(p.sample_id);
      }
      for (const auto& s : manifest.samples()) have += ids.count(s.id);
    }
    ctx.plan("would query " + cfg.base_url + "/infer for " + std::to_string(manifest.size() - have) + " of " +
             std::to_string(manifest.size()) + " samples (model " + cfg.model_id + ", " +
             std::string(to_string(cfg.input_mode)) + " mode, max_in_flight " + std::to_string(cfg.max_in_flight) + ")");
    return kExitOk;
  }
  const fs::path out = ctx.output(f.out, Artifact::Predictions, "--out");
  if (!ctx.run.empty()) create_run(ctx.cfg.runs_dir, ctx.run, ctx.cfg.to_json());
  InferenceResult r = run_inference(manifest, cfg, ctx.cfg.dataset_root, ctx.cfg.cache_dir, out);
  ctx.keep(Artifact::Predictions, out);
  if (ctx.g.json_out) ctx.out << batch_json(r.report).dump(2) << "\n";
  else {
    ctx.out << "predictions: " << r.predictions.size() << " of " << r.report.total << " (new " << r.report.succeeded
            << ", reused " << r.report.skipped << ", failed " << r.report.failures.size() << ", " << r.report.requests
            << " requests)\n";
  }
  return finish_batch(ctx, "inference", r.report);
}

BleuSmoothing parse_smoothing(const std::string& s) {
  const std::string l = to_lower(s);
  if (l == "none") return BleuSmoothing::None;
  if (l == "add-one" || l == "add1" || l == "addone") return BleuSmoothing::AddOnePositiveN;
  throw Error(Errc::ConfigError, kModule, "smoothing must be none or add-one");
}

struct EvalFlags {
  ManifestFlags m;
  std::string predictions;
  std::string out;
  bool no_semantic = false;
  int max_n = 4;
  std::string smoothing = "none";
  std::string sentence_smoothing = "add-one";
  bool rouge_1 = false;
};

int cmd_eval(Context& ctx, const EvalFlags& f) {
  const DatasetManifest full = load_for(ctx, f.m);
  const DatasetManifest manifest = subset(full, f.m.split);
  std::vector<Prediction> preds;
  for (auto& p : load_predictions(ctx.input(f.predictions, Artifact::Predictions, "--predictions"))) {
    // Predictions for samples outside the selected split are not orphans.
    if (full.find(p.sample_id) && !manifest.find(p.sample_id)) continue;
    preds.push_back(std::move(p));
  }
  if (f.max_n < 1) throw Error(Errc::ConfigError, kModule, "--max-n must be >= 1");
  ScoreOptions opts;
  opts.max_n = f.max_n;
  opts.corpus_smoothing = parse_smoothing(f.smoothing);
  opts.sentence_smoothing = parse_smoothing(f.sentence_smoothing);
  opts.rouge_1 = f.rouge_1;
  const bool semantic = !f.no_semantic && !ctx.cfg.embedding.base_url.empty();
  if (ctx.g.dry_run) {
    ctx.plan("would score " + std::to_string(preds.size()) + " predictions against " +
             std::to_string(manifest.size()) + " samples (BLEU-" + std::to_string(f.max_n) + ", ROUGE-L" +
             (semantic ? ", embeddings from " + ctx.cfg.embedding.base_url : std::string()) + ")");
    return kExitOk;
  }
  std::optional<EmbeddingClient> emb;
  if (semantic) {
    emb.emplace(ctx.cfg.embedding);
    opts.embeddings = &*emb;
  }
  const auto reports = score_runs(manifest, preds, opts);
  const fs::path out = ctx.output(f.out, Artifact::Metrics, "--out");
  write_file_atomic(out, serialize_metrics(reports));
  ctx.keep(Artifact::Metrics, out);
  if (ctx.g.json_out) ctx.out << serialize_metrics(reports);
  else {
    for (const auto& r : reports) {
      auto pct = [](std::optional<double> v, double scale) { return v ? format_fixed(*v * scale, 2) : "n/a"; };
      ctx.out << r.model_id << "@" << to_string(r.input_mode) << ": scored " << r.scored << "/" << r.samples_total
              << ", BLEU " << pct(r.bleu, 100) << ", ROUGE-L " << pct(r.rouge_l, 100) << ", similarity "
              << pct(r.semantic_similarity, 100) << ", accuracy " << pct(r.overall_accuracy, 1) << "\n";
    }
  }
  for (const auto& r : reports) {
    if (!r.missing.empty()) {
      std::string ids;
      for (const auto& id : r.missing) ids += (ids.empty() ? "" : ", ") + id;
      ctx.err << json({{"warning",
                        {{"code", "text_metrics.MISSING_PREDICTION"},
                         {"message", r.model_id + " has no prediction for: " + ids}}}})
                     .dump()
              << "\n";
    }
  }
  return kExitOk;
}

struct AsrFlags {
  std::string pairs;
  std::string out;
  bool keep_case = false;
  bool keep_punctuation = false;
};

int cmd_asr(Context& ctx, const AsrFlags& f) {
  const auto pairs = load_transcript_pairs(f.pairs);
  if (ctx.g.dry_run) {
    ctx.plan("would score " + std::to_string(pairs.size()) + " transcript pairs");
    return kExitOk;
  }
  AsrTokenization tok;
  tok.lowercase = !f.keep_case;
  tok.strip_punctuation = !f.keep_punctuation;
  const ErrorRateReport r = corpus_error_rates(pairs, tok);
  const std::string content = r.to_json().dump(2) + "\n";
  if (!f.out.empty() || !ctx.run.empty()) {
    const fs::path out = ctx.output(f.out, Artifact::Asr, "--out");
    write_file_atomic(out, content);
    ctx.keep(Artifact::Asr, out);
  }
  if (ctx.g.json_out) ctx.out << content;
  else {
    ctx.out << "pairs " << r.pairs.size() << ": WER " << format_fixed(r.wer * 100, 2) << "%, CER "
            << format_fixed(r.cer * 100, 2) << "%\n";
  }
  return kExitOk;
}

struct JudgeFlags {
  ManifestFlags m;
  std::string predictions;
  std::string verdicts;
  std::string rubric_out;
  int rounds = 3;
  std::string templates;
  std::string kinds = "all";
  std::string model_id;
  std::string mode;
};

int cmd_judge(Context& ctx, const JudgeFlags& f) {
  const auto& judges = ctx.cfg.require_judges();
  const DatasetManifest manifest = subset(load_for(ctx, f.m), f.m.split);
  std::vector<Prediction> preds;
  std::set<std::pair<std::string, InputMode>> groups;
  std::optional<InputMode> mode;
  if (!f.mode.empty()) {
    mode = parse_input_mode(f.mode);
    if (!mode) throw Error(Errc::ConfigError, kModule, "--mode must be speech or text");
  }
  for (auto& p : load_predictions(ctx.input(f.predictions, Artifact::Predictions, "--predictions"))) {
    if (!manifest.find(p.sample_id)) continue;
    if (!f.model_id.empty() && p.model_id != f.model_id) continue;
    if (mode && p.input_mode != *mode) continue;
    groups.insert({p.model_id, p.input_mode});
    preds.push_back(std::move(p));
  }
  if (groups.size() > 1) {
    throw Error(Errc::ConfigError, kModule, "predictions cover several models or modes; pick one with --model-id/--mode");
  }
  JudgeRunOptions opts;
  opts.rounds = f.rounds;
  const std::string kinds = to_lower(f.kinds);
  opts.judge_structure = kinds == "all" || kinds.find("structure") != std::string::npos;
  opts.judge_reasoning = kinds == "all" || kinds.find("reasoning") != std::string::npos;
  if (!opts.judge_structure && !opts.judge_reasoning) {
    throw Error(Errc::ConfigError, kModule, "--kinds must name structure, reasoning or all");
  }
  if (!f.templates.empty()) opts.templates = PromptTemplates::load(f.templates);
  const fs::path verdicts_path = ctx.output(f.verdicts, Artifact::Verdicts, "--verdicts");
  if (ctx.g.dry_run) {
    std::size_t have = 0;
    if (fs::exists(verdicts_path)) have = load_verdicts(verdicts_path).size();
    const std::size_t per = (opts.judge_structure ? 1 : 0) + (opts.judge_reasoning ? 1 : 0);
    for (const auto& j : judges) {
      ctx.plan("judge " + j.effective_rater() + " (" + j.model_name + " at " + j.base_url + "): up to " +
               std::to_string(preds.size() * per * static_cast<std::size_t>(f.rounds)) + " verdicts over " +
               std::to_string(preds.size()) + " predictions, " + std::to_string(f.rounds) + " rounds");
    }
    ctx.plan(std::to_string(have) + " verdicts already in " + verdicts_path.string() + " would be reused");
    return kExitOk;
  }
  if (!ctx.run.empty()) create_run(ctx.cfg.runs_dir, ctx.run, ctx.cfg.to_json());
  opts.verdicts_path = verdicts_path;
  int code = kExitOk;
  for (const auto& j : judges) {
    JudgeRunResult r = judge_run(manifest, preds, j, opts);
    ctx.out << "judge " << j.effective_rater() << ": " << r.report.succeeded << " judged, " << r.report.skipped
            << " reused, " << r.report.failures.size() << " failed (" << r.reasoning_calls << " reasoning and "
            << r.structure_calls << " structure calls)\n";
    code = std::max(code, finish_batch(ctx, "judge", r.report));
  }
  ctx.keep(Artifact::Verdicts, verdicts_path);

  std::vector<JudgeVerdict> all;
  for (auto& v : load_verdicts(verdicts_path)) {
    if (f.model_id.empty() || v.model_id.empty() || v.model_id == f.model_id) all.push_back(std::move(v));
  }
  std::vector<RubricAggregate> rubric;
  for (const auto& rater : raters_in(all)) rubric.push_back(aggregate_rubric(all, rater));
  if (!f.rubric_out.empty() || !ctx.run.empty()) {
    const fs::path out = ctx.output(f.rubric_out, Artifact::Rubric, "--rubric-out");
    write_file_atomic(out, serialize_rubric(rubric));
    ctx.keep(Artifact::Rubric, out);
  }
  for (const auto& r : rubric) {
    ctx.out << "  " << r.rater_id << ": mean level " << format_fixed(r.mean_level, 2) << " over " << r.judged
            << " samples; structure " << r.structure_passes << "/" << r.structure_total << "\n";
  }
  return code;
}

struct CorrelateFlags {
  std::vector<std::string> verdicts;
  std::string metrics;
  std::vector<std::string> fields;
  std::string out;
};

std::optional<double> metric_field(const ScoredPrediction& s, const std::string& field) {
  if (field == "bleu") return s.bleu;
  if (field == "rouge_l") return s.rouge_l.f1;
  if (field == "rouge_1") return s.rouge_1.f1;
  if (field == "semantic_similarity") return s.semantic_similarity;
  if (field == "accuracy") {
    if (s.accuracy_hit) return *s.accuracy_hit ? 1.0 : 0.0;
    return s.open_accuracy;
  }
  throw Error(Errc::ConfigError, kModule,
              "--metric-field must be bleu, rouge_l, rouge_1, semantic_similarity or accuracy");
}

int cmd_correlate(Context& ctx, const CorrelateFlags& f) {
  std::vector<fs::path> files;
  for (const auto& v : f.verdicts) files.emplace_back(v);
  if (files.empty()) files.push_back(ctx.input("", Artifact::Verdicts, "--verdicts"));
  std::vector<JudgeVerdict> all;
  for (const auto& p : files) {
    for (auto& v : load_verdicts(p)) all.push_back(std::move(v));
  }
  std::vector<ScoreVector> vectors = reasoning_score_vectors(all);
  if (!f.metrics.empty() || (!ctx.run.empty() && !f.fields.empty())) {
    const fs::path mpath = ctx.input(f.metrics, Artifact::Metrics, "--metrics");
    const json arr = json::parse(read_file(mpath));
    for (const auto& field : f.fields) {
      for (const auto& mj : arr) {
        const MetricReport m = MetricReport::from_json(mj);
        ScoreVector sv;
        sv.rater_id = "metric:" + field + "@" + m.model_id;
        for (const auto& s : m.per_sample) {
          if (auto v = metric_field(s, field)) sv.scores.emplace_back(s.sample_id, *v);
        }
        vectors.push_back(std::move(sv));
      }
    }
  }
  if (ctx.g.dry_run) {
    ctx.plan("would correlate " + std::to_string(vectors.size()) + " score vectors (" +
             std::to_string(vectors.size() * (vectors.size() - (vectors.empty() ? 0 : 1)) / 2) + " pairs)");
    return kExitOk;
  }
  const auto results = agreement_matrix(vectors);
  if (!f.out.empty() || !ctx.run.empty()) {
    const fs::path out = ctx.output(f.out, Artifact::Agreement, "--out");
    write_file_atomic(out, serialize_agreement(results));
    ctx.keep(Artifact::Agreement, out);
  }
  if (ctx.g.json_out) ctx.out << serialize_agreement(results);
  else {
    for (const auto& r : results) {
      auto show = [](const Correlation& c) { return c.defined() ? format_fixed(*c.get(), 3) : std::string("DEGENERATE"); };
      ctx.out << r.rater_a << " ~ " << r.rater_b << ": n=" << r.n << " r=" << show(r.pearson_r)
              << " rho=" << show(r.spearman_rho) << "\n";
    }
  }
  return kExitOk;
}

struct ReportFlags {
  std::string format = "all";
  bool to_stdout = false;
  std::string diff;
};

int cmd_report(Context& ctx, const ReportFlags& f) {
  if (ctx.run.empty()) throw Error(Errc::ConfigError, kModule, "--run is required");
  const RunBundle bundle = load_bundle(ctx.cfg.runs_dir, ctx.run);
  if (!f.diff.empty()) {
    const RunBundle other = load_bundle(ctx.cfg.runs_dir, f.diff);
    const auto deltas = diff_runs(bundle, other);
    if (ctx.g.json_out) ctx.out << deltas_to_json(deltas).dump(2) << "\n";
    else ctx.out << deltas_to_text(deltas);
    return kExitOk;
  }
  std::vector<ReportFormat> formats;
  if (to_lower(f.format) == "all") formats = {ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Machine};
  else if (auto fmt = parse_report_format(f.format)) formats = {*fmt};
  else throw Error(Errc::ConfigError, kModule, "--format must be markdown, csv, machine or all");
  for (auto fmt : formats) {
    const fs::path out = run_directory(ctx.cfg.runs_dir, ctx.run) / ("report." + std::string(report_extension(fmt)));
    if (ctx.g.dry_run) {
      ctx.plan("would write " + out.string());
      continue;
    }
    const std::string text = render_report(bundle, fmt);
    write_file_atomic(out, text);
    if (f.to_stdout) ctx.out << text;
    else ctx.out << "wrote " << out.string() << "\n";
  }
  return kExitOk;
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::ConfigError, kModule, "--bind must be host:port");
  try {
    const int port = std::stoi(bind.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    return {bind.substr(0, colon), port};
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, kModule, "--bind port must be a number in 0..65535");
  }
}

struct ServeFlags {
  std::string bind = "127.0.0.1:8080";
  std::string model_id;
};

int cmd_serve(Context& ctx, const ServeFlags& f) {
  const auto [host, port] = parse_bind(f.bind);
  ServeOptions opts{ctx.cfg.runs_dir, ctx.run, ctx.cfg.dataset_root, ctx.cfg.cache_dir, f.model_id};
  if (ctx.g.dry_run) {
    ctx.plan("would serve run " + (ctx.run.empty() ? std::string("(latest)") : ctx.run) + " from " +
             ctx.cfg.runs_dir.string() + " on " + host + ":" + std::to_string(port));
    return kExitOk;
  }
  ReviewServer server(opts);
  ctx.out << "serving on http://" << host << ":" << port << "\n" << std::flush;
  server.listen(host, port);
  return kExitOk;
}

struct MockFlags {
  std::string bind = "127.0.0.1:8090";
  std::string manifest;
};

int cmd_mock(Context& ctx, const MockFlags& f) {
  const auto [host, port] = parse_bind(f.bind);
  if (ctx.g.dry_run) {
    ctx.plan("would serve mock services on " + host + ":" + std::to_string(port));
    return kExitOk;
  }
  MockServices mock;
  if (!f.manifest.empty()) {
    LoadOptions opts;
    opts.require_answer_structure = false;
    mock.use_manifest_answers(load_manifest(f.manifest, opts));
  }
  ctx.out << "mock services on http://" << host << ":" << port << "\n" << std::flush;
  mock.listen(host, port);
  return kExitOk;
}

struct FixtureFlags {
  std::string out;
  bool reference = false;
  std::size_t size = 20;
};

int cmd_fixtures(Context& ctx, const FixtureFlags& f) {
  if (ctx.g.dry_run) {
    ctx.plan("would write " + std::string(f.reference ? "the 866-sample reference" : "a demo") + " dataset to " + f.out);
    return kExitOk;
  }
  write_fixture_dataset(f.out, f.reference, f.size);
  ctx.out << "wrote fixture dataset to " << f.out << "\n";
  return kExitOk;
}

}  // namespace

// ---- entry point ----------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Benchmark harness for speech-driven medical VQA", "medvqa"};
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  std::string run;
  std::map<std::string, std::string> flags;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--set", g.sets, "Override a setting: key=value (repeatable)");
  app.add_option("--dataset-root", g.dataset_root, "Root for image paths");
  app.add_option("--cache-dir", g.cache_dir, "Audio cache directory");
  app.add_option("--runs-dir", g.runs_dir, "Run bundles directory");
  app.add_flag("--dry-run", g.dry_run, "Print planned actions without side effects");
  app.add_flag("--json", g.json_out, "Machine-readable output");
  app.add_option("--run", run, "Run id: read inputs from and record outputs in runs/<id>/");

  auto flag_opt = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto manifest_opts = [&](CLI::App* sub, ManifestFlags& m, bool with_split) {
    sub->add_option("--manifest", m.manifest, "Manifest file (default: the run's)");
    sub->add_flag("--strict", m.strict, "Require images under the dataset root");
    sub->add_flag("--no-answer-structure", m.no_answer_structure, "Skip the two-sentence check on OPEN answers");
    sub->add_option("--rules", m.rules, "Normalization rules JSON");
    if (with_split) sub->add_option("--split", m.split, "train, test or all (default test)");
  };

  ValidateFlags vf;
  auto* validate = app.add_subcommand("validate", "Check a manifest and optional count spec");
  manifest_opts(validate, vf.m, false);
  validate->add_option("--counts", vf.counts, "Count spec (JSONL)");

  TtsFlags tf;
  auto* tts = app.add_subcommand("tts", "Synthesize spoken questions");
  manifest_opts(tts, tf.m, false);
  tts->add_option("--out", tf.out, "Updated manifest (default: the run's)");
  tts->add_option("--max-in-flight", tf.max_in_flight, "Concurrent provider requests");
  flag_opt(tts, "--voice-url", "voice.provider_base_url", "TTS provider base URL");
  flag_opt(tts, "--voice", "voice.voice_name", "Voice name");
  flag_opt(tts, "--sample-rate", "voice.sample_rate_hz", "Sample rate in Hz");

  InferFlags inf;
  auto* infer = app.add_subcommand("infer", "Collect predictions from a model endpoint");
  manifest_opts(infer, inf.m, true);
  infer->add_option("--out", inf.out, "Predictions file (default: the run's)");
  flag_opt(infer, "--endpoint", "inference.base_url", "Inference endpoint base URL");
  flag_opt(infer, "--model-id", "inference.model_id", "Model id");
  flag_opt(infer, "--mode", "inference.input_mode", "speech or text");
  flag_opt(infer, "--max-in-flight", "inference.max_in_flight", "Concurrent requests");
  flag_opt(infer, "--max-retries", "inference.max_retries", "Retries per sample");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Score predictions with text metrics");
  manifest_opts(eval, ef.m, true);
  eval->add_option("--predictions", ef.predictions, "Predictions file (default: the run's)");
  eval->add_option("--out", ef.out, "Metric report (default: the run's)");
  eval->add_flag("--no-semantic", ef.no_semantic, "Skip embedding similarity");
  eval->add_option("--max-n", ef.max_n, "BLEU order (default 4)");
  eval->add_option("--smoothing", ef.smoothing, "Corpus BLEU smoothing: none or add-one");
  eval->add_option("--sentence-smoothing", ef.sentence_smoothing, "Sentence BLEU smoothing");
  eval->add_flag("--rouge-1", ef.rouge_1, "Also report ROUGE-1");
  flag_opt(eval, "--embedding-url", "embedding.base_url", "Embedding service base URL");

  AsrFlags af;
  auto* asr = app.add_subcommand("asr", "Word and character error rates");
  asr->add_option("--pairs", af.pairs, "Transcript pairs (JSONL: id, reference, hypothesis)")->required();
  asr->add_option("--out", af.out, "Error-rate report (default: the run's when --run is set)");
  asr->add_flag("--keep-case", af.keep_case, "Do not lowercase");
  asr->add_flag("--keep-punctuation", af.keep_punctuation, "Do not strip punctuation");

  JudgeFlags jf;
  auto* judge = app.add_subcommand("judge", "Grade predictions with LLM judges");
  manifest_opts(judge, jf.m, true);
  judge->add_option("--predictions", jf.predictions, "Predictions file (default: the run's)");
  judge->add_option("--verdicts", jf.verdicts, "Verdicts file, appended and resumed (default: the run's)");
  judge->add_option("--rubric-out", jf.rubric_out, "Rubric aggregate (default: the run's when --run is set)");
  judge->add_option("--rounds", jf.rounds, "Rounds per sample (default 3)");
  judge->add_option("--templates", jf.templates, "Directory with system.txt, reasoning.txt, structure.txt");
  judge->add_option("--kinds", jf.kinds, "structure, reasoning or all");
  judge->add_option("--model-id", jf.model_id, "Judge predictions of this model only");
  judge->add_option("--mode", jf.mode, "Judge predictions of this input mode only");
  flag_opt(judge, "--judge-url", "judge.base_url", "Chat endpoint base URL (first judge)");
  flag_opt(judge, "--judge-model", "judge.model_name", "Judge model name (first judge)");
  flag_opt(judge, "--rater", "judge.rater_id", "Rater id (first judge)");

  CorrelateFlags cf;
  auto* correlate = app.add_subcommand("correlate", "Pearson and Spearman agreement between raters");
  correlate->add_option("--verdicts", cf.verdicts, "Verdict files (repeatable; default: the run's)");
  correlate->add_option("--metrics", cf.metrics, "Metric report whose per-sample scores join as raters");
  correlate->add_option("--metric-field", cf.fields, "bleu, rouge_l, rouge_1, semantic_similarity, accuracy");
  correlate->add_option("--out", cf.out, "Agreement records (default: the run's when --run is set)");

  ReportFlags rf;
  auto* report = app.add_subcommand("report", "Render a run's tables");
  report->add_option("--format", rf.format, "markdown, csv, machine or all");
  report->add_flag("--stdout", rf.to_stdout, "Also print the rendered report");
  report->add_option("--diff", rf.diff, "Compare with another run id");

  ServeFlags sf;
  auto* serve = app.add_subcommand("serve", "REST API for the review UI");
  serve->add_option("--bind", sf.bind, "host:port (default 127.0.0.1:8080)");
  serve->add_option("--model-id", sf.model_id, "Model whose predictions are reviewed");

  std::string p_counts, p_pairs, p_mode, p_manifest, p_split = "test";
  int p_rounds = 3;
  bool p_no_semantic = false;
  auto* pipeline = app.add_subcommand("pipeline", "validate, tts, infer, eval, asr, judge, correlate and report");
  pipeline->add_option("--manifest", p_manifest, "Manifest file")->required();
  pipeline->add_option("--counts", p_counts, "Count spec for validate");
  pipeline->add_option("--pairs", p_pairs, "Transcript pairs for asr");
  pipeline->add_option("--split", p_split, "train, test or all (default test)");
  pipeline->add_option("--rounds", p_rounds, "Judge rounds (default 3)");
  pipeline->add_flag("--no-semantic", p_no_semantic, "Skip embedding similarity");
  flag_opt(pipeline, "--mode", "inference.input_mode", "speech or text");

  MockFlags mf;
  auto* mock = app.add_subcommand("mock", "Local stand-in services for offline demos");
  mock->add_option("--bind", mf.bind, "host:port (default 127.0.0.1:8090)");
  mock->add_option("--manifest", mf.manifest, "Answer inference requests from this manifest");

  FixtureFlags ff;
  auto* fixtures = app.add_subcommand("fixtures", "Write a synthetic dataset");
  fixtures->add_option("--out", ff.out, "Output directory")->required();
  fixtures->add_flag("--reference", ff.reference, "866-sample reference manifest with its count spec");
  fixtures->add_option("--size", ff.size, "Demo size (default 20)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << json({{"error", {{"code", "cli.CONFIG_ERROR"}, {"module", "cli"}, {"message", e.what()}}}}).dump() << "\n";
    return kExitUsage;
  }

  try {
    for (const auto& s : g.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(Errc::ConfigError, kModule, "--set expects key=value, got " + s);
      flags.emplace(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!g.dataset_root.empty()) flags["dataset_root"] = g.dataset_root;
    if (!g.cache_dir.empty()) flags["cache_dir"] = g.cache_dir;
    if (!g.runs_dir.empty()) flags["runs_dir"] = g.runs_dir;
    Context ctx{g, resolve_config(load_config_file(g.config_path), process_env(), flags), run, out, err};

    if (validate->parsed()) return cmd_validate(ctx, vf);
    if (tts->parsed()) return cmd_tts(ctx, tf);
    if (infer->parsed()) return cmd_infer(ctx, inf);
    if (eval->parsed()) return cmd_eval(ctx, ef);
    if (asr->parsed()) return cmd_asr(ctx, af);
    if (judge->parsed()) return cmd_judge(ctx, jf);
    if (correlate->parsed()) return cmd_correlate(ctx, cf);
    if (report->parsed()) return cmd_report(ctx, rf);
    if (serve->parsed()) return cmd_serve(ctx, sf);
    if (mock->parsed()) return cmd_mock(ctx, mf);
    if (fixtures->parsed()) return cmd_fixtures(ctx, ff);
    if (pipeline->parsed()) {
      if (run.empty()) throw Error(Errc::ConfigError, kModule, "pipeline needs --run");
      std::vector<std::string> common = {args[0]};
      if (!g.config_path.empty()) common.insert(common.end(), {"--config", g.config_path});
      for (const auto& [k, v] : flags) common.insert(common.end(), {"--set", k + "=" + v});
      common.insert(common.end(), {"--run", run});
      if (g.json_out) common.push_back("--json");
      const bool speech = ctx.cfg.inference.input_mode == InputMode::Speech;
      std::vector<std::vector<std::string>> steps;
      std::vector<std::string> v = {"validate", "--manifest", p_manifest};
      if (!p_counts.empty()) v.insert(v.end(), {"--counts", p_counts});
      steps.push_back(v);
      // Later steps read the manifest recorded in the run by validate.
      if (speech) steps.push_back({"tts"});
      steps.push_back({"infer", "--split", p_split});
      std::vector<std::string> e = {"eval", "--split", p_split};
      if (p_no_semantic) e.push_back("--no-semantic");
      steps.push_back(e);
      if (!p_pairs.empty()) steps.push_back({"asr", "--pairs", p_pairs});
      steps.push_back({"judge", "--split", p_split, "--rounds", std::to_string(p_rounds)});
      steps.push_back({"correlate", "--metric-field", "bleu"});
      steps.push_back({"report"});
      for (const auto& step : steps) {
        std::vector<std::string> a = common;
        a.insert(a.end(), step.begin(), step.end());
        if (g.dry_run) {
          // Each step depends on the previous one's outputs, so only the plan is printed.
          std::string line;
          for (std::size_t i = 1; i < a.size(); ++i) line += (i > 1 ? " " : "") + a[i];
          ctx.plan("medvqa " + line);
          continue;
        }
        if (!g.json_out) out << "== " << step.front() << "\n";
        const int code = run_cli(a, out, err);
        if (code != kExitOk) return code;
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    print_error(err, e);
    return e.code() == Errc::ConfigError ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << json({{"error", {{"code", "cli.INTERNAL"}, {"module", "cli"}, {"message", e.what()}}}}).dump() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace medvqa
