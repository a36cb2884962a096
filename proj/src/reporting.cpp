#include "medvqa/reporting.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <sstream>

namespace medvqa {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "reporting";

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path bundle_path(const fs::path& runs_dir, const std::string& run_id) {
  return run_directory(runs_dir, run_id) / "bundle.json";
}

json read_bundle_json(const fs::path& runs_dir, const std::string& run_id) {
  const fs::path p = bundle_path(runs_dir, run_id);
  if (!fs::exists(p)) throw Error(Errc::NotFound, kModule, "no run \"" + run_id + "\" under " + runs_dir.string());
  const json j = json::parse(read_file(p), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(Errc::MalformedRecord, kModule, "bundle.json of run " + run_id + " is not a JSON object");
  }
  return j;
}

void write_bundle_json(const fs::path& runs_dir, const std::string& run_id, json j) {
  j["updated_at"] = utc_now();
  write_file_atomic(bundle_path(runs_dir, run_id), j.dump(2) + "\n");
}

void check_run_id(const std::string& run_id) {
  if (run_id.empty() || run_id == "." || run_id == ".." ||
      run_id.find_first_of("/\\") != std::string::npos) {
    throw Error(Errc::ConfigError, kModule, "invalid run id \"" + run_id + "\"");
  }
}

}  // namespace

std::string_view artifact_role(Artifact a) {
  switch (a) {
    case Artifact::Manifest: return "manifest";
    case Artifact::Predictions: return "predictions";
    case Artifact::Verdicts: return "verdicts";
    case Artifact::Metrics: return "metrics";
    case Artifact::Rubric: return "rubric";
    case Artifact::Asr: return "asr";
    case Artifact::Agreement: return "agreement";
  }
  return "?";
}

std::string_view artifact_file(Artifact a) {
  switch (a) {
    case Artifact::Manifest: return "manifest.jsonl";
    case Artifact::Predictions: return "predictions.jsonl";
    case Artifact::Verdicts: return "verdicts.jsonl";
    case Artifact::Metrics: return "metrics.json";
    case Artifact::Rubric: return "rubric.json";
    case Artifact::Asr: return "asr.json";
    case Artifact::Agreement: return "agreement.jsonl";
  }
  return "?";
}

fs::path run_directory(const fs::path& runs_dir, const std::string& run_id) {
  check_run_id(run_id);
  return runs_dir / run_id;
}

void create_run(const fs::path& runs_dir, const std::string& run_id, const json& config) {
  const fs::path dir = run_directory(runs_dir, run_id);
  if (fs::exists(dir / "bundle.json")) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, kModule, "cannot create " + dir.string() + ": " + ec.message());
  const std::string now = utc_now();
  json j = {{"run_id", run_id}, {"refs", json::object()}, {"config", config}, {"created_at", now}};
  write_bundle_json(runs_dir, run_id, j);
  JsonlAppender index(runs_dir / "index.jsonl");
  index.append({{"run_id", run_id}, {"created_at", now}});
}

void record_artifact(const fs::path& runs_dir, const std::string& run_id, Artifact role, const std::string& content) {
  create_run(runs_dir, run_id);
  const fs::path dir = run_directory(runs_dir, run_id);
  write_file_atomic(dir / artifact_file(role), content);
  refresh_artifact(runs_dir, run_id, role);
}

void refresh_artifact(const fs::path& runs_dir, const std::string& run_id, Artifact role) {
  json j = read_bundle_json(runs_dir, run_id);
  const fs::path file = run_directory(runs_dir, run_id) / artifact_file(role);
  j["refs"][std::string(artifact_role(role))] = {{"file", artifact_file(role)}, {"sha256", sha256_file(file)}};
  write_bundle_json(runs_dir, run_id, std::move(j));
}

void set_run_config(const fs::path& runs_dir, const std::string& run_id, const json& config) {
  create_run(runs_dir, run_id);
  json j = read_bundle_json(runs_dir, run_id);
  j["config"] = config;
  write_bundle_json(runs_dir, run_id, std::move(j));
}

std::vector<std::string> list_runs(const fs::path& runs_dir) {
  std::vector<std::string> out;
  const fs::path index = runs_dir / "index.jsonl";
  if (!fs::exists(index)) return out;
  std::set<std::string> seen;
  for (const auto& [line, rec] : read_jsonl(index, kModule, true)) {
    const std::string id = rec.value("run_id", std::string());
    if (!id.empty() && seen.insert(id).second) out.push_back(id);
  }
  return out;
}

std::string serialize_metrics(const std::vector<MetricReport>& metrics) {
  json arr = json::array();
  for (const auto& m : metrics) arr.push_back(m.to_json());
  return arr.dump(2) + "\n";
}

std::string serialize_rubric(const std::vector<RubricAggregate>& rubric) {
  json arr = json::array();
  for (const auto& r : rubric) arr.push_back(r.to_json());
  return arr.dump(2) + "\n";
}

std::string serialize_agreement(const std::vector<AgreementResult>& agreement) {
  std::string out;
  for (const auto& a : agreement) out += a.to_json().dump() + "\n";
  return out;
}

std::vector<AgreementResult> parse_agreement(const fs::path& path) {
  std::vector<AgreementResult> out;
  for (const auto& [line, rec] : read_jsonl(path, kModule)) {
    try {
      out.push_back(AgreementResult::from_json(rec));
    } catch (const json::exception& e) {
      throw Error(Errc::MalformedRecord, kModule, "line " + std::to_string(line) + ": " + e.what(), line);
    }
  }
  return out;
}

RunBundle load_bundle(const fs::path& runs_dir, const std::string& run_id) {
  const json j = read_bundle_json(runs_dir, run_id);
  const fs::path dir = run_directory(runs_dir, run_id);
  RunBundle b;
  b.run_id = j.value("run_id", run_id);
  b.config = j.value("config", json::object());
  b.created_at = j.value("created_at", std::string());
  b.updated_at = j.value("updated_at", std::string());
  const json refs = j.value("refs", json::object());
  for (const auto& [role, ref] : refs.items()) {
    ArtifactRef r{ref.at("file").get<std::string>(), ref.at("sha256").get<std::string>()};
    const fs::path file = dir / r.file;
    if (r.file.find("..") != std::string::npos || !fs::exists(file)) {
      throw Error(Errc::BrokenRef, kModule, "run " + run_id + ": " + role + " file " + r.file + " is missing",
                  std::nullopt, role);
    }
    const std::string actual = sha256_file(file);
    if (actual != r.sha256) {
      throw Error(Errc::BrokenRef, kModule,
                  "run " + run_id + ": " + role + " file " + r.file + " digest " + actual.substr(0, 12) +
                      " does not match recorded " + r.sha256.substr(0, 12),
                  std::nullopt, role);
    }
    b.refs.emplace(role, std::move(r));
  }

  auto path_of = [&](Artifact a) { return dir / artifact_file(a); };
  try {
    if (b.has(Artifact::Manifest)) {
      LoadOptions opts;
      opts.require_answer_structure = false;
      b.manifest = load_manifest(path_of(Artifact::Manifest), opts);
    }
    if (b.has(Artifact::Predictions)) b.predictions = load_predictions(path_of(Artifact::Predictions));
    if (b.has(Artifact::Verdicts)) b.verdicts = load_verdicts(path_of(Artifact::Verdicts));
    if (b.has(Artifact::Metrics)) {
      for (const auto& m : json::parse(read_file(path_of(Artifact::Metrics)))) {
        b.metrics.push_back(MetricReport::from_json(m));
      }
    }
    if (b.has(Artifact::Rubric)) {
      for (const auto& r : json::parse(read_file(path_of(Artifact::Rubric)))) {
        b.rubric.push_back(RubricAggregate::from_json(r));
      }
    }
    if (b.has(Artifact::Asr)) b.asr = ErrorRateReport::from_json(json::parse(read_file(path_of(Artifact::Asr))));
    if (b.has(Artifact::Agreement)) b.agreement = parse_agreement(path_of(Artifact::Agreement));
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, kModule, "run " + run_id + ": " + e.what());
  }
  return b;
}

// ---- rendering ------------------------------------------------------------

std::optional<ReportFormat> parse_report_format(std::string_view s) {
  const std::string l = to_lower(trim(s));
  if (l == "markdown" || l == "md") return ReportFormat::Markdown;
  if (l == "csv") return ReportFormat::Csv;
  if (l == "machine" || l == "json") return ReportFormat::Machine;
  return std::nullopt;
}

std::string_view report_extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Markdown: return "md";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Machine: return "json";
  }
  return "txt";
}

namespace {

TableCell text_cell(const std::string& s) { return {s, s}; }

TableCell count_cell(std::size_t n) { return {std::to_string(n), n}; }

// Fractions in [0,1] rendered as percentages.
TableCell rate_cell(std::optional<double> fraction) {
  if (!fraction) return {"n/a", nullptr};
  const double pct = *fraction * 100.0;
  return {format_fixed(pct, 2), pct};
}

// Values already expressed in percent.
TableCell percent_cell(std::optional<double> pct) {
  if (!pct) return {"n/a", nullptr};
  return {format_fixed(*pct, 2), *pct};
}

TableCell decimal_cell(double v, int decimals) { return {format_fixed(v, decimals), v}; }

TableCell corr_cell(const Correlation& c) {
  if (!c.defined()) return {"DEGENERATE", nullptr};
  return {format_fixed(*c.get(), 3), *c.get()};
}

std::string model_label(const MetricReport& m) { return m.model_id; }

std::string mode_label(InputMode m) { return m == InputMode::Speech ? "Speech" : "Text"; }

ReportTable asr_table(const RunBundle& b) {
  ReportTable t{"asr", "Speech recognition error rates", {"Pairs", "WER (%)", "CER (%)", "Mean WER (%)", "Mean CER (%)"}, {}, {}};
  if (!b.asr) {
    t.gap = "no ASR report in this run";
    return t;
  }
  const auto& a = *b.asr;
  t.rows.push_back({count_cell(a.pairs.size()), rate_cell(a.wer), rate_cell(a.cer), rate_cell(a.mean_wer),
                    rate_cell(a.mean_cer)});
  return t;
}

ReportTable text_similarity_table(const RunBundle& b) {
  ReportTable t{"text_similarity", "Text comparison metrics", {"Model", "Input", "BertSim (%)", "BLEU (%)", "ROUGE-L (%)"}, {}, {}};
  for (const auto& m : b.metrics) {
    t.rows.push_back({text_cell(model_label(m)), text_cell(mode_label(m.input_mode)), rate_cell(m.semantic_similarity),
                      rate_cell(m.bleu), rate_cell(m.rouge_l)});
  }
  if (t.rows.empty()) t.gap = "no metric report in this run";
  return t;
}

ReportTable structure_table(const RunBundle& b) {
  ReportTable t{"structure", "Answer structure", {"Rater", "Passes/Total", "Pass rate (%)", "Mean passes over rounds"}, {}, {}};
  for (const auto& r : b.rubric) {
    if (r.structure_total == 0) continue;
    const std::string frac = std::to_string(r.structure_passes) + "/" + std::to_string(r.structure_total);
    t.rows.push_back({text_cell(r.rater_id),
                      {frac, {{"passes", r.structure_passes}, {"total", r.structure_total}}},
                      rate_cell(static_cast<double>(r.structure_passes) / static_cast<double>(r.structure_total)),
                      decimal_cell(r.structure_mean_passes, 2)});
  }
  if (t.rows.empty()) t.gap = "no structure verdicts in this run";
  return t;
}

ReportTable reasoning_table(const RunBundle& b) {
  ReportTable t{"reasoning_levels", "Reasoning levels", {"Level"}, {}, {}};
  std::vector<const RubricAggregate*> raters;
  for (const auto& r : b.rubric) {
    if (r.judged > 0) raters.push_back(&r);
  }
  if (raters.empty()) {
    t.gap = "no reasoning verdicts in this run";
    return t;
  }
  for (const auto* r : raters) {
    t.columns.push_back(r->rater_id);
    t.columns.push_back(r->rater_id + " (mean)");
  }
  for (RubricLevel l : kRubricLevels) {
    const auto k = static_cast<std::size_t>(level_value(l));
    std::vector<TableCell> row{text_cell(std::to_string(k) + " " + std::string(level_label(l)))};
    for (const auto* r : raters) {
      row.push_back(count_cell(r->bucket_counts[k]));
      row.push_back(decimal_cell(r->mean_counts[k], 2));
    }
    t.rows.push_back(std::move(row));
  }
  std::vector<TableCell> total{text_cell("Total")};
  std::vector<TableCell> mean{text_cell("Mean level")};
  for (const auto* r : raters) {
    total.push_back(count_cell(r->judged));
    double s = 0;
    for (double c : r->mean_counts) s += c;
    total.push_back(decimal_cell(s, 2));
    mean.push_back(decimal_cell(r->mean_level, 2));
    mean.push_back(text_cell(""));
  }
  t.rows.push_back(std::move(total));
  t.rows.push_back(std::move(mean));
  return t;
}

ReportTable accuracy_table(const RunBundle& b) {
  ReportTable t{"open_closed_accuracy", "Open and closed question accuracy",
                {"Model", "Input", "Open (%)", "Open n", "Closed (%)", "Closed n", "Overall (%)"}, {}, {}};
  for (const auto& m : b.metrics) {
    t.rows.push_back({text_cell(model_label(m)), text_cell(mode_label(m.input_mode)), percent_cell(m.open_accuracy),
                      count_cell(m.open_count), percent_cell(m.closed_accuracy), count_cell(m.closed_count),
                      percent_cell(m.overall_accuracy)});
  }
  if (t.rows.empty()) t.gap = "no metric report in this run";
  return t;
}

ReportTable summary_table(const RunBundle& b) {
  ReportTable t{"accuracy_bleu_similarity", "Accuracy, BLEU and embedding similarity",
                {"Model", "Input", "Accuracy (%)", "BLEU (%)", "Bert-sim (%)", "Coverage"}, {}, {}};
  for (const auto& m : b.metrics) {
    const std::string cov = std::to_string(m.scored) + "/" + std::to_string(m.samples_total);
    t.rows.push_back({text_cell(model_label(m)), text_cell(mode_label(m.input_mode)), percent_cell(m.overall_accuracy),
                      rate_cell(m.bleu), rate_cell(m.semantic_similarity),
                      {cov, {{"scored", m.scored}, {"total", m.samples_total}}}});
  }
  if (t.rows.empty()) t.gap = "no metric report in this run";
  return t;
}

ReportTable agreement_table(const RunBundle& b) {
  ReportTable t{"agreement", "Rater agreement", {"Rater A", "Rater B", "n", "Pearson r", "Spearman rho"}, {}, {}};
  for (const auto& a : b.agreement) {
    t.rows.push_back({text_cell(a.rater_a), text_cell(a.rater_b), count_cell(a.n), corr_cell(a.pearson_r),
                      corr_cell(a.spearman_rho)});
  }
  if (t.rows.empty()) t.gap = "no agreement results in this run";
  return t;
}

std::string md_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string render_markdown(const RunBundle& bundle, const std::vector<ReportTable>& tables) {
  std::ostringstream os;
  os << "# Evaluation report\n\n";
  if (bundle.manifest) {
    os << "Manifest `" << bundle.manifest->name() << "`, " << bundle.manifest->size() << " samples.\n\n";
  }
  for (const auto& t : tables) {
    os << "## " << t.title << "\n\n";
    if (t.gap) {
      os << "_Not available: " << *t.gap << "._\n\n";
      continue;
    }
    os << "|";
    for (const auto& c : t.columns) os << " " << md_escape(c) << " |";
    os << "\n|";
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i == 0 ? " --- |" : " ---: |");
    os << "\n";
    for (const auto& row : t.rows) {
      os << "|";
      for (const auto& cell : row) os << " " << md_escape(cell.text) << " |";
      os << "\n";
    }
    os << "\n";
  }
  return os.str();
}

std::string render_csv(const std::vector<ReportTable>& tables) {
  std::ostringstream os;
  os << "table,row,column,value\n";
  for (const auto& t : tables) {
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      for (std::size_t c = 0; c < t.rows[r].size() && c < t.columns.size(); ++c) {
        os << t.id << ',' << r << ',' << csv_field(t.columns[c]) << ',' << csv_field(t.rows[r][c].text) << '\n';
      }
    }
  }
  return os.str();
}

std::string render_machine(const RunBundle& bundle, const std::vector<ReportTable>& tables) {
  nlohmann::ordered_json out;
  if (bundle.manifest) {
    out["manifest"] = {{"name", bundle.manifest->name()}, {"samples", bundle.manifest->size()}};
  }
  out["tables"] = nlohmann::ordered_json::array();
  for (const auto& t : tables) {
    nlohmann::ordered_json jt;
    jt["id"] = t.id;
    jt["title"] = t.title;
    jt["columns"] = t.columns;
    jt["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : t.rows) {
      nlohmann::ordered_json jr = nlohmann::ordered_json::array();
      for (const auto& cell : row) jr.push_back(nlohmann::ordered_json::parse(cell.value.dump()));
      jt["rows"].push_back(std::move(jr));
    }
    jt["gap"] = t.gap ? nlohmann::ordered_json(*t.gap) : nlohmann::ordered_json(nullptr);
    out["tables"].push_back(std::move(jt));
  }
  return out.dump(2) + "\n";
}

}  // namespace

std::vector<ReportTable> build_report_tables(const RunBundle& bundle) {
  return {asr_table(bundle),      text_similarity_table(bundle), structure_table(bundle), reasoning_table(bundle),
          accuracy_table(bundle), summary_table(bundle),         agreement_table(bundle)};
}

std::string render_report(const RunBundle& bundle, ReportFormat format) {
  const auto tables = build_report_tables(bundle);
  switch (format) {
    case ReportFormat::Markdown: return render_markdown(bundle, tables);
    case ReportFormat::Csv: return render_csv(tables);
    case ReportFormat::Machine: return render_machine(bundle, tables);
  }
  return {};
}

// ---- diffs ----------------------------------------------------------------

namespace {

using Flat = std::map<std::string, double>;

void put(Flat& f, const std::string& key, std::optional<double> v) {
  if (v && std::isfinite(*v)) f[key] = *v;
}

Flat flatten(const RunBundle& b) {
  Flat f;
  for (const auto& m : b.metrics) {
    const std::string p = "metrics/" + m.model_id + "@" + std::string(to_string(m.input_mode)) + "/";
    put(f, p + "bleu", m.bleu);
    put(f, p + "sentence_bleu_mean", m.sentence_bleu_mean);
    put(f, p + "rouge_l", m.rouge_l);
    put(f, p + "rouge_1", m.rouge_1);
    put(f, p + "semantic_similarity", m.semantic_similarity);
    put(f, p + "open_accuracy", m.open_accuracy);
    put(f, p + "closed_accuracy", m.closed_accuracy);
    put(f, p + "overall_accuracy", m.overall_accuracy);
  }
  for (const auto& r : b.rubric) {
    const std::string p = "rubric/" + r.rater_id + "/";
    if (r.judged > 0) {
      for (RubricLevel l : kRubricLevels) {
        const auto k = static_cast<std::size_t>(level_value(l));
        const std::string name(level_name(l));
        put(f, p + "count/" + name, static_cast<double>(r.bucket_counts[k]));
        put(f, p + "mean_count/" + name, r.mean_counts[k]);
      }
      put(f, p + "mean_level", r.mean_level);
    }
    if (r.structure_total > 0) put(f, p + "structure_passes", static_cast<double>(r.structure_passes));
  }
  if (b.asr) {
    put(f, "asr/wer", b.asr->wer);
    put(f, "asr/cer", b.asr->cer);
  }
  for (const auto& a : b.agreement) {
    const std::string p = "agreement/" + a.rater_a + "~" + a.rater_b + "/";
    put(f, p + "pearson", a.pearson_r.get());
    put(f, p + "spearman", a.spearman_rho.get());
  }
  return f;
}

}  // namespace

std::vector<MetricDelta> diff_runs(const RunBundle& a, const RunBundle& b) {
  const auto ma = a.refs.find("manifest");
  const auto mb = b.refs.find("manifest");
  if (ma == a.refs.end() || mb == b.refs.end() || ma->second.sha256 != mb->second.sha256) {
    throw Error(Errc::ManifestMismatch, kModule,
                "runs " + a.run_id + " and " + b.run_id + " were not evaluated on the same manifest");
  }
  const Flat fa = flatten(a);
  const Flat fb = flatten(b);
  std::vector<MetricDelta> out;
  for (const auto& [key, va] : fa) {
    auto it = fb.find(key);
    if (it == fb.end()) continue;
    out.push_back({key, va, it->second, it->second - va});
  }
  return out;
}

json deltas_to_json(const std::vector<MetricDelta>& deltas) {
  json arr = json::array();
  for (const auto& d : deltas) arr.push_back({{"key", d.key}, {"a", d.a}, {"b", d.b}, {"delta", d.delta}});
  return arr;
}

std::string deltas_to_text(const std::vector<MetricDelta>& deltas) {
  std::ostringstream os;
  for (const auto& d : deltas) {
    std::string delta = format_fixed(d.delta, 4);
    if (delta.front() != '-') delta = "+" + delta;
    os << d.key << "\t" << format_fixed(d.a, 4) << "\t" << format_fixed(d.b, 4) << "\t" << delta << "\n";
  }
  return os.str();
}

}  // namespace medvqa
