#include "medvqa/asr.hpp"

#include <cctype>

#include "medvqa/error.hpp"

namespace medvqa {

namespace {

constexpr const char* kModule = "asr";

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace

EditCounts edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  const std::size_t width = m + 1;
  std::vector<std::size_t> cost((n + 1) * width);
  for (std::size_t i = 0; i <= n; ++i) cost[i * width] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = cost[(i - 1) * width + j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const std::size_t del = cost[(i - 1) * width + j] + 1;
      const std::size_t ins = cost[i * width + j - 1] + 1;
      cost[i * width + j] = std::min({diag, del, ins});
    }
  }
  EditCounts out;
  out.distance = cost[n * width + m];
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = cost[i * width + j];
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (here == cost[(i - 1) * width + j - 1] + (same ? 0 : 1)) {
        if (!same) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && here == cost[(i - 1) * width + j] + 1) {
      ++out.deletions;
      --i;
      continue;
    }
    ++out.insertions;
    --j;
  }
  return out;
}

std::vector<std::string> word_units(std::string_view text, const AsrTokenization& tok) {
  std::vector<std::string> out;
  for (std::string w : split_whitespace(text)) {
    if (tok.strip_punctuation) {
      std::size_t b = 0;
      std::size_t e = w.size();
      while (b < e && is_ascii_punct(w[b])) ++b;
      while (e > b && is_ascii_punct(w[e - 1])) --e;
      w = w.substr(b, e - b);
    }
    if (tok.lowercase) w = to_lower(w);
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::string> char_units(std::string_view text, const AsrTokenization& tok) {
  std::string joined;
  for (const auto& w : word_units(text, tok)) {
    if (!joined.empty()) joined.push_back(' ');
    joined += w;
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < joined.size()) {
    const std::size_t len = std::min(utf8_len(static_cast<unsigned char>(joined[i])), joined.size() - i);
    out.emplace_back(joined.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

PairErrorRates score_pair(const TranscriptPair& pair, const AsrTokenization& tok) {
  PairErrorRates r;
  r.id = pair.id;
  const auto ref_w = word_units(pair.reference, tok);
  if (ref_w.empty()) {
    throw Error(Errc::EmptyReference, kModule,
                "reference is empty after tokenization" + (pair.id.empty() ? std::string() : " (pair " + pair.id + ")"),
                std::nullopt, pair.id);
  }
  const auto ref_c = char_units(pair.reference, tok);
  r.words = edit_distance(ref_w, word_units(pair.hypothesis, tok));
  r.ref_words = ref_w.size();
  r.chars = edit_distance(ref_c, char_units(pair.hypothesis, tok));
  r.ref_chars = ref_c.size();
  r.wer = static_cast<double>(r.words.distance) / static_cast<double>(r.ref_words);
  r.cer = static_cast<double>(r.chars.distance) / static_cast<double>(r.ref_chars);
  return r;
}

void accumulate(EditCounts& into, const EditCounts& add) {
  into.distance += add.distance;
  into.substitutions += add.substitutions;
  into.deletions += add.deletions;
  into.insertions += add.insertions;
}

json counts_json(const EditCounts& c) {
  return {{"distance", c.distance}, {"substitutions", c.substitutions},
          {"deletions", c.deletions}, {"insertions", c.insertions}};
}

EditCounts counts_from_json(const json& j) {
  return {j.at("distance").get<std::size_t>(), j.at("substitutions").get<std::size_t>(),
          j.at("deletions").get<std::size_t>(), j.at("insertions").get<std::size_t>()};
}

}  // namespace

double wer(const TranscriptPair& pair, const AsrTokenization& tok) { return score_pair(pair, tok).wer; }

double cer(const TranscriptPair& pair, const AsrTokenization& tok) { return score_pair(pair, tok).cer; }

ErrorRateReport corpus_error_rates(const std::vector<TranscriptPair>& pairs, const AsrTokenization& tok) {
  if (pairs.empty()) throw Error(Errc::EmptyReference, kModule, "no transcript pairs");
  ErrorRateReport rep;
  for (const auto& p : pairs) {
    rep.pairs.push_back(score_pair(p, tok));
    const auto& r = rep.pairs.back();
    accumulate(rep.word_totals, r.words);
    accumulate(rep.char_totals, r.chars);
    rep.ref_words += r.ref_words;
    rep.ref_chars += r.ref_chars;
    rep.mean_wer += r.wer;
    rep.mean_cer += r.cer;
  }
  rep.wer = static_cast<double>(rep.word_totals.distance) / static_cast<double>(rep.ref_words);
  rep.cer = static_cast<double>(rep.char_totals.distance) / static_cast<double>(rep.ref_chars);
  rep.mean_wer /= static_cast<double>(pairs.size());
  rep.mean_cer /= static_cast<double>(pairs.size());
  return rep;
}

json ErrorRateReport::to_json() const {
  json per = json::array();
  for (const auto& p : pairs) {
    per.push_back({{"id", p.id}, {"wer", p.wer}, {"cer", p.cer},
                   {"words", counts_json(p.words)}, {"ref_words", p.ref_words},
                   {"chars", counts_json(p.chars)}, {"ref_chars", p.ref_chars}});
  }
  return {{"wer", wer}, {"cer", cer}, {"mean_wer", mean_wer}, {"mean_cer", mean_cer},
          {"words", counts_json(word_totals)}, {"ref_words", ref_words},
          {"chars", counts_json(char_totals)}, {"ref_chars", ref_chars}, {"pairs", per}};
}

ErrorRateReport ErrorRateReport::from_json(const json& j) {
  ErrorRateReport r;
  r.wer = j.at("wer").get<double>();
  r.cer = j.at("cer").get<double>();
  r.mean_wer = j.at("mean_wer").get<double>();
  r.mean_cer = j.at("mean_cer").get<double>();
  r.word_totals = counts_from_json(j.at("words"));
  r.ref_words = j.at("ref_words").get<std::size_t>();
  r.char_totals = counts_from_json(j.at("chars"));
  r.ref_chars = j.at("ref_chars").get<std::size_t>();
  for (const auto& p : j.value("pairs", json::array())) {
    PairErrorRates pr;
    pr.id = p.at("id").get<std::string>();
    pr.wer = p.at("wer").get<double>();
    pr.cer = p.at("cer").get<double>();
    pr.words = counts_from_json(p.at("words"));
    pr.ref_words = p.at("ref_words").get<std::size_t>();
    pr.chars = counts_from_json(p.at("chars"));
    pr.ref_chars = p.at("ref_chars").get<std::size_t>();
    r.pairs.push_back(std::move(pr));
  }
  return r;
}

std::vector<TranscriptPair> load_transcript_pairs(const std::filesystem::path& path) {
  std::vector<TranscriptPair> out;
  for (const auto& [line, rec] : read_jsonl(path, kModule)) {
    auto field = [&](const char* name) {
      if (!rec.contains(name) || !rec.at(name).is_string()) {
        throw Error(Errc::MissingField, kModule,
                    path.filename().string() + ":" + std::to_string(line) + ": missing string field \"" + name + "\"",
                    line);
      }
      return rec.at(name).get<std::string>();
    };
    out.push_back({field("id"), field("reference"), field("hypothesis")});
  }
  return out;
}

}  // namespace medvqa
