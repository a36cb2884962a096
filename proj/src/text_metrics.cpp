#include "medvqa/text_metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "medvqa/error.hpp"

namespace medvqa {

namespace {

constexpr const char* kModule = "metrics";

bool is_token_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts ngram_counts(const Tokens& t, int n) {
  NgramCounts out;
  const auto un = static_cast<std::size_t>(n);
  if (t.size() < un) return out;
  for (std::size_t i = 0; i + un <= t.size(); ++i) {
    std::vector<std::string_view> key;
    key.reserve(un);
    for (std::size_t k = 0; k < un; ++k) key.emplace_back(t[i + k]);
    ++out[key];
  }
  return out;
}

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> kStop = {
      "a",     "an",   "the",   "and",  "or",    "but",   "of",    "in",    "on",    "at",   "to",
      "for",   "with", "by",    "from", "as",    "is",    "are",   "was",   "were",  "be",   "been",
      "being", "it",   "its",   "this", "that",  "these", "those", "there", "here",  "which", "what",
      "who",   "whom", "whose", "has",  "have",  "had",   "do",    "does",  "did",   "can",  "could",
      "may",   "might", "will", "would", "should", "shall", "such", "some", "any",   "no",   "not",
      "if",    "than", "then",  "so",   "also",  "into",  "about", "based", "provided", "image",
      "shows", "show", "appears", "appear", "indicate", "indicates", "suggest", "suggests", "i",
      "we",    "you",  "they",  "he",   "she",   "them",  "their", "our",   "your",  "his",  "her"};
  return kStop;
}

}  // namespace

Tokens metric_tokens(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char c : text) {
    if (is_token_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---- BLEU -----------------------------------------------------------------

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  if (matches.size() < other.matches.size()) {
    matches.resize(other.matches.size(), 0);
    totals.resize(other.totals.size(), 0);
  }
  for (std::size_t i = 0; i < other.matches.size(); ++i) {
    matches[i] += other.matches[i];
    totals[i] += other.totals[i];
  }
  hyp_length += other.hyp_length;
  ref_length += other.ref_length;
  return *this;
}

BleuStats bleu_stats(const std::vector<Tokens>& references, const Tokens& hypothesis, int max_n) {
  if (references.empty()) throw Error(Errc::BadRequest, kModule, "BLEU needs at least one reference");
  if (max_n < 1) throw Error(Errc::BadRequest, kModule, "BLEU order must be >= 1");
  BleuStats s;
  const auto un = static_cast<std::size_t>(max_n);
  s.matches.assign(un, 0);
  s.totals.assign(un, 0);
  s.hyp_length = hypothesis.size();
  s.ref_length = references.front().size();
  for (const auto& r : references) {
    const auto d = [&](std::size_t len) {
      return len > s.hyp_length ? len - s.hyp_length : s.hyp_length - len;
    };
    if (d(r.size()) < d(s.ref_length) || (d(r.size()) == d(s.ref_length) && r.size() < s.ref_length)) {
      s.ref_length = r.size();
    }
  }
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts hyp = ngram_counts(hypothesis, n);
    NgramCounts max_ref;
    for (const auto& r : references) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    std::size_t matched = 0;
    std::size_t total = 0;
    for (const auto& [g, c] : hyp) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    s.matches[static_cast<std::size_t>(n - 1)] = matched;
    s.totals[static_cast<std::size_t>(n - 1)] = total;
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats, int max_n, BleuSmoothing smoothing) {
  if (stats.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    const double m = i < stats.matches.size() ? static_cast<double>(stats.matches[i]) : 0.0;
    const double t = i < stats.totals.size() ? static_cast<double>(stats.totals[i]) : 0.0;
    double p;
    if (smoothing == BleuSmoothing::AddOnePositiveN && n > 1) {
      p = (m + 1.0) / (t + 1.0);
    } else {
      if (m == 0.0 || t == 0.0) return 0.0;
      p = m / t;
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(stats.hyp_length);
  const double r = static_cast<double>(stats.ref_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

double bleu(const std::vector<Tokens>& references, const Tokens& hypothesis, int max_n, BleuSmoothing smoothing) {
  return bleu_from_stats(bleu_stats(references, hypothesis, max_n), max_n, smoothing);
}

// ---- ROUGE ----------------------------------------------------------------

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (const auto& x : a) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = x == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

RougeScore prf(double overlap, std::size_t ref_len, std::size_t hyp_len) {
  RougeScore s;
  if (ref_len == 0 || hyp_len == 0) return s;
  s.precision = overlap / static_cast<double>(hyp_len);
  s.recall = overlap / static_cast<double>(ref_len);
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

RougeScore rouge_l(const Tokens& reference, const Tokens& hypothesis) {
  return prf(static_cast<double>(lcs_length(reference, hypothesis)), reference.size(), hypothesis.size());
}

RougeScore rouge_1(const Tokens& reference, const Tokens& hypothesis) {
  std::map<std::string_view, std::size_t> ref;
  for (const auto& t : reference) ++ref[t];
  std::map<std::string_view, std::size_t> hyp;
  for (const auto& t : hypothesis) ++hyp[t];
  std::size_t overlap = 0;
  for (const auto& [t, c] : hyp) {
    auto it = ref.find(t);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return prf(static_cast<double>(overlap), reference.size(), hypothesis.size());
}

// ---- accuracy -------------------------------------------------------------

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : metric_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

bool closed_accuracy(std::string_view prediction, std::string_view answer) {
  const std::string a = normalize_answer(answer);
  if (a.empty()) return false;
  if (a == normalize_answer(prediction)) return true;
  const std::size_t end = prediction.find_first_of(".!?");
  const Tokens first = metric_tokens(prediction.substr(0, end));
  if (a != "yes" && a != "no") {
    // Option answers: the key must appear as a phrase in the first sentence.
    const Tokens key = metric_tokens(a);
    return !key.empty() && std::search(first.begin(), first.end(), key.begin(), key.end()) != first.end();
  }
  const std::string_view opposite = a == "yes" ? "no" : "yes";
  const bool has = std::find(first.begin(), first.end(), a) != first.end();
  const bool has_opposite = std::find(first.begin(), first.end(), opposite) != first.end();
  return has && !has_opposite;
}

double open_accuracy(std::string_view prediction, std::string_view answer) {
  const Tokens ans = metric_tokens(answer);
  std::set<std::string> content;
  for (const auto& t : ans) {
    if (stopwords().count(t) == 0) content.insert(t);
  }
  if (content.empty()) content.insert(ans.begin(), ans.end());
  if (content.empty()) return 0.0;
  const Tokens pred = metric_tokens(prediction);
  const std::set<std::string> have(pred.begin(), pred.end());
  const auto hits = std::count_if(content.begin(), content.end(),
                                  [&](const std::string& t) { return have.count(t) != 0; });
  return static_cast<double>(hits) / static_cast<double>(content.size());
}

std::string closed_answer_key(const Sample& sample) {
  if (sample.extra.contains("short_answer") && sample.extra.at("short_answer").is_string()) {
    return sample.extra.at("short_answer").get<std::string>();
  }
  const Tokens t = metric_tokens(sample.answer_text);
  if (!t.empty() && (t.front() == "yes" || t.front() == "no")) return t.front();
  return sample.answer_text;
}

// ---- semantic similarity --------------------------------------------------

json EmbeddingServiceConfig::to_json() const {
  return {{"base_url", base_url},       {"model_name", model_name},
          {"dimension", dimension},     {"api_key_env", api_key_env},
          {"timeout_ms", timeout.count()}, {"max_retries", retry.max_retries},
          {"backoff_ms", retry.base_delay.count()}, {"max_in_flight", max_in_flight},
          {"batch_size", batch_size}};
}

EmbeddingServiceConfig EmbeddingServiceConfig::from_json(const json& j) {
  EmbeddingServiceConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model_name", c.model_name);
  c.dimension = j.value("dimension", c.dimension);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
  c.retry.max_retries = j.value("max_retries", c.retry.max_retries);
  c.retry.base_delay = std::chrono::milliseconds(j.value("backoff_ms", c.retry.base_delay.count()));
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.validate();
  return c;
}

void EmbeddingServiceConfig::validate() const {
  if (dimension == 0) throw Error(Errc::ConfigError, kModule, "embedding dimension must be positive");
  if (batch_size == 0) throw Error(Errc::ConfigError, kModule, "embedding batch_size must be positive");
  if (retry.max_retries < 0) throw Error(Errc::ConfigError, kModule, "max_retries must be >= 0");
}

EmbeddingClient::EmbeddingClient(EmbeddingServiceConfig cfg)
    : cfg_(std::move(cfg)), http_(cfg_.base_url, cfg_.timeout) {
  cfg_.validate();
}

std::vector<std::vector<double>> EmbeddingClient::fetch(const std::vector<std::string>& texts) {
  const json body = {{"model", cfg_.model_name}, {"input", texts}, {"dimensions", cfg_.dimension}};
  const auto headers = auth_headers(cfg_.api_key_env);
  json reply;
  try {
    reply = with_retries(cfg_.retry, [&] {
      ++requests_;
      auto res = http_.post("/embeddings", body.dump(), "application/json", headers);
      if (!res) throw RetryableFailure("embedding service unreachable");
      if (is_retryable_status(res->status)) {
        throw RetryableFailure("embedding service returned HTTP " + std::to_string(res->status));
      }
      if (res->status != 200) {
        throw Error(Errc::ServiceUnavailable, kModule,
                    "embedding service rejected request with HTTP " + std::to_string(res->status));
      }
      json j = json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("data") || !j.at("data").is_array()) {
        throw Error(Errc::ServiceUnavailable, kModule, "embedding reply lacks a \"data\" array");
      }
      return j;
    });
  } catch (const RetryableFailure& e) {
    throw Error(Errc::ServiceUnavailable, kModule, e.what());
  }
  const json& data = reply.at("data");
  if (data.size() != texts.size()) {
    throw Error(Errc::ServiceUnavailable, kModule,
                "embedding reply has " + std::to_string(data.size()) + " vectors for " +
                    std::to_string(texts.size()) + " inputs");
  }
  std::vector<std::vector<double>> out(texts.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    const json& item = data.at(k);
    const std::size_t idx = item.value("index", k);
    if (idx >= out.size() || !item.contains("embedding")) {
      throw Error(Errc::ServiceUnavailable, kModule, "malformed embedding item");
    }
    auto vec = item.at("embedding").get<std::vector<double>>();
    if (vec.size() != cfg_.dimension) {
      throw Error(Errc::DimensionMismatch, kModule,
                  "expected dimension " + std::to_string(cfg_.dimension) + ", service returned " +
                      std::to_string(vec.size()));
    }
    out[idx] = std::move(vec);
  }
  return out;
}

std::vector<std::vector<double>> EmbeddingClient::embed(const std::vector<std::string>& texts) {
  auto key_of = [&](const std::string& t) {
    const std::array<std::string_view, 2> f = {cfg_.model_name, t};
    return sha256_fields(f);
  };
  std::vector<std::string> keys;
  keys.reserve(texts.size());
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mu_);
    std::set<std::string> queued;
    for (const auto& t : texts) {
      keys.push_back(key_of(t));
      if (cache_.count(keys.back()) == 0 && queued.insert(keys.back()).second) missing.push_back(t);
    }
  }
  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < missing.size(); i += cfg_.batch_size) {
    batches.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(i),
                         missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), i + cfg_.batch_size)));
  }
  std::vector<std::exception_ptr> errors(batches.size());
  parallel_for(batches.size(), cfg_.max_in_flight, [&](std::size_t b) {
    try {
      auto vecs = fetch(batches[b]);
      std::lock_guard lock(mu_);
      for (std::size_t k = 0; k < vecs.size(); ++k) cache_[key_of(batches[b][k])] = std::move(vecs[k]);
    } catch (...) {
      errors[b] = std::current_exception();
    }
  });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  std::lock_guard lock(mu_);
  for (const auto& k : keys) out.push_back(cache_.at(k));
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw Error(Errc::DimensionMismatch, kModule, "cosine of vectors with different dimensions");
  }
  double dot = 0;
  double na = 0;
  double nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double semantic_similarity(std::string_view prediction, std::string_view answer, EmbeddingClient& client) {
  const auto v = client.embed({std::string(prediction), std::string(answer)});
  return cosine_similarity(v[0], v[1]);
}

// ---- run scoring ----------------------------------------------------------

namespace {

std::string_view smoothing_name(BleuSmoothing s) {
  return s == BleuSmoothing::None ? "none" : "add_one_positive_n";
}

BleuSmoothing parse_smoothing(const std::string& s) {
  return s == "none" ? BleuSmoothing::None : BleuSmoothing::AddOnePositiveN;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

json rouge_json(const RougeScore& r) { return {{"p", r.precision}, {"r", r.recall}, {"f1", r.f1}}; }

RougeScore rouge_from(const json& j) {
  return {j.at("p").get<double>(), j.at("r").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

MetricReport aggregate_metric_report(MetricReport r) {
  r.scored = r.per_sample.size();
  r.bleu.reset();
  r.sentence_bleu_mean.reset();
  r.rouge_l.reset();
  r.closed_accuracy.reset();
  r.open_accuracy.reset();
  r.overall_accuracy.reset();
  r.semantic_similarity.reset();
  const bool had_rouge_1 = r.rouge_1.has_value();
  r.rouge_1.reset();
  r.closed_count = 0;
  r.open_count = 0;
  if (r.per_sample.empty()) return r;

  BleuStats total;
  double sent_bleu = 0, rl = 0, r1 = 0, open_sum = 0, sim_sum = 0;
  std::size_t closed_hits = 0, sim_n = 0;
  for (const auto& s : r.per_sample) {
    total += s.bleu_stats;
    sent_bleu += s.bleu;
    rl += s.rouge_l.f1;
    r1 += s.rouge_1.f1;
    if (s.accuracy_hit) {
      ++r.closed_count;
      closed_hits += *s.accuracy_hit ? 1 : 0;
    }
    if (s.open_accuracy) {
      ++r.open_count;
      open_sum += *s.open_accuracy;
    }
    if (s.semantic_similarity) {
      ++sim_n;
      sim_sum += *s.semantic_similarity;
    }
  }
  const auto n = static_cast<double>(r.per_sample.size());
  r.bleu = bleu_from_stats(total, r.max_n, r.corpus_smoothing);
  r.sentence_bleu_mean = sent_bleu / n;
  r.rouge_l = rl / n;
  if (had_rouge_1) r.rouge_1 = r1 / n;
  if (r.closed_count > 0) r.closed_accuracy = 100.0 * static_cast<double>(closed_hits) / static_cast<double>(r.closed_count);
  if (r.open_count > 0) r.open_accuracy = 100.0 * open_sum / static_cast<double>(r.open_count);
  if (r.closed_count + r.open_count > 0) {
    r.overall_accuracy = 100.0 * (static_cast<double>(closed_hits) + open_sum) /
                         static_cast<double>(r.closed_count + r.open_count);
  }
  if (sim_n > 0) r.semantic_similarity = sim_sum / static_cast<double>(sim_n);
  return r;
}

MetricReport score_run(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                       const ScoreOptions& options) {
  std::vector<std::string> orphans;
  std::map<std::string, const Prediction*> by_sample;
  for (const auto& p : predictions) {
    if (!manifest.find(p.sample_id)) {
      orphans.push_back(p.sample_id);
      continue;
    }
    by_sample[p.sample_id] = &p;
  }
  if (!orphans.empty()) {
    std::string list;
    for (const auto& id : orphans) list += (list.empty() ? "" : ", ") + id;
    throw Error(Errc::OrphanPrediction, kModule, "predictions reference unknown sample ids: " + list);
  }
  MetricReport rep;
  rep.max_n = options.max_n;
  rep.corpus_smoothing = options.corpus_smoothing;
  if (options.rouge_1) rep.rouge_1 = 0.0;
  if (!predictions.empty()) {
    rep.model_id = predictions.front().model_id;
    rep.input_mode = predictions.front().input_mode;
    for (const auto& p : predictions) {
      if (p.model_id != rep.model_id || p.input_mode != rep.input_mode) {
        throw Error(Errc::BadRequest, kModule,
                    "score_run expects one model and input mode; use score_runs for mixed files");
      }
    }
  }
  rep.samples_total = manifest.size();

  std::vector<std::pair<const Sample*, const Prediction*>> work;
  for (const auto& s : manifest.samples()) {
    auto it = by_sample.find(s.id);
    if (it == by_sample.end()) {
      rep.missing.push_back(s.id);
    } else {
      work.emplace_back(&s, it->second);
    }
  }

  std::vector<std::vector<double>> pred_vecs;
  std::vector<std::vector<double>> ans_vecs;
  if (options.embeddings != nullptr && !work.empty()) {
    std::vector<std::string> preds;
    std::vector<std::string> answers;
    for (const auto& [s, p] : work) {
      preds.push_back(p->prediction.empty() ? std::string(" ") : p->prediction);
      answers.push_back(s->answer_text);
    }
    pred_vecs = options.embeddings->embed(preds);
    ans_vecs = options.embeddings->embed(answers);
  }

  for (std::size_t i = 0; i < work.size(); ++i) {
    const auto& [s, p] = work[i];
    ScoredPrediction sp;
    sp.sample_id = s->id;
    sp.question_type = s->question_type;
    const Tokens ref = metric_tokens(s->answer_text);
    const Tokens hyp = metric_tokens(p->prediction);
    sp.bleu_stats = bleu_stats({ref}, hyp, options.max_n);
    sp.bleu = bleu_from_stats(sp.bleu_stats, options.max_n, options.sentence_smoothing);
    sp.rouge_l = rouge_l(ref, hyp);
    if (options.rouge_1) sp.rouge_1 = rouge_1(ref, hyp);
    if (s->question_type == QuestionType::Closed) {
      sp.accuracy_hit = closed_accuracy(p->prediction, closed_answer_key(*s));
    } else {
      sp.open_accuracy = open_accuracy(p->prediction, s->answer_text);
    }
    if (!pred_vecs.empty()) {
      sp.semantic_similarity = p->prediction.empty() ? 0.0 : cosine_similarity(pred_vecs[i], ans_vecs[i]);
    }
    rep.per_sample.push_back(std::move(sp));
  }
  return aggregate_metric_report(std::move(rep));
}

std::vector<MetricReport> score_runs(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                                     const ScoreOptions& options) {
  std::map<std::pair<std::string, InputMode>, std::vector<Prediction>> groups;
  std::vector<std::pair<std::string, InputMode>> order;
  for (const auto& p : predictions) {
    auto key = std::make_pair(p.model_id, p.input_mode);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(p);
  }
  std::vector<MetricReport> out;
  if (groups.empty()) {
    out.push_back(score_run(manifest, {}, options));
    return out;
  }
  for (const auto& key : order) out.push_back(score_run(manifest, groups.at(key), options));
  return out;
}

json MetricReport::to_json() const {
  json rows = json::array();
  for (const auto& s : per_sample) {
    json row = {{"sample_id", s.sample_id},
                {"question_type", to_string(s.question_type)},
                {"bleu", s.bleu},
                {"bleu_matches", s.bleu_stats.matches},
                {"bleu_totals", s.bleu_stats.totals},
                {"hyp_length", s.bleu_stats.hyp_length},
                {"ref_length", s.bleu_stats.ref_length},
                {"rouge_l", rouge_json(s.rouge_l)},
                {"rouge_1", rouge_json(s.rouge_1)},
                {"accuracy_hit", s.accuracy_hit ? json(*s.accuracy_hit) : json(nullptr)},
                {"open_accuracy", opt_json(s.open_accuracy)},
                {"semantic_similarity", opt_json(s.semantic_similarity)}};
    rows.push_back(std::move(row));
  }
  return {{"model_id", model_id},
          {"input_mode", to_string(input_mode)},
          {"samples_total", samples_total},
          {"scored", scored},
          {"missing", missing},
          {"bleu", opt_json(bleu)},
          {"sentence_bleu_mean", opt_json(sentence_bleu_mean)},
          {"rouge_l", opt_json(rouge_l)},
          {"rouge_1", opt_json(rouge_1)},
          {"closed_accuracy", opt_json(closed_accuracy)},
          {"closed_count", closed_count},
          {"open_accuracy", opt_json(open_accuracy)},
          {"open_count", open_count},
          {"overall_accuracy", opt_json(overall_accuracy)},
          {"semantic_similarity", opt_json(semantic_similarity)},
          {"bleu_max_n", max_n},
          {"bleu_corpus_smoothing", smoothing_name(corpus_smoothing)},
          {"semantic_similarity_method", "sequence-embedding cosine"},
          {"per_sample", rows}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.model_id = j.at("model_id").get<std::string>();
  r.input_mode = parse_input_mode(j.at("input_mode").get<std::string>()).value_or(InputMode::Speech);
  r.samples_total = j.at("samples_total").get<std::size_t>();
  r.scored = j.at("scored").get<std::size_t>();
  r.missing = j.at("missing").get<std::vector<std::string>>();
  r.bleu = opt_from(j, "bleu");
  r.sentence_bleu_mean = opt_from(j, "sentence_bleu_mean");
  r.rouge_l = opt_from(j, "rouge_l");
  r.rouge_1 = opt_from(j, "rouge_1");
  r.closed_accuracy = opt_from(j, "closed_accuracy");
  r.closed_count = j.at("closed_count").get<std::size_t>();
  r.open_accuracy = opt_from(j, "open_accuracy");
  r.open_count = j.at("open_count").get<std::size_t>();
  r.overall_accuracy = opt_from(j, "overall_accuracy");
  r.semantic_similarity = opt_from(j, "semantic_similarity");
  r.max_n = j.value("bleu_max_n", 4);
  r.corpus_smoothing = parse_smoothing(j.value("bleu_corpus_smoothing", std::string("none")));
  for (const auto& row : j.value("per_sample", json::array())) {
    ScoredPrediction s;
    s.sample_id = row.at("sample_id").get<std::string>();
    s.question_type = parse_question_type(row.at("question_type").get<std::string>()).value_or(QuestionType::Open);
    s.bleu = row.at("bleu").get<double>();
    s.bleu_stats.matches = row.at("bleu_matches").get<std::vector<std::size_t>>();
    s.bleu_stats.totals = row.at("bleu_totals").get<std::vector<std::size_t>>();
    s.bleu_stats.hyp_length = row.at("hyp_length").get<std::size_t>();
    s.bleu_stats.ref_length = row.at("ref_length").get<std::size_t>();
    s.rouge_l = rouge_from(row.at("rouge_l"));
    s.rouge_1 = rouge_from(row.at("rouge_1"));
    if (!row.at("accuracy_hit").is_null()) s.accuracy_hit = row.at("accuracy_hit").get<bool>();
    s.open_accuracy = opt_from(row, "open_accuracy");
    s.semantic_similarity = opt_from(row, "semantic_similarity");
    r.per_sample.push_back(std::move(s));
  }
  return r;
}

}  // namespace medvqa
