#include "medvqa/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "medvqa/error.hpp"

namespace medvqa {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "dataset";

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Mri: return "MRI";
    case Modality::Ct: return "CT";
    case Modality::Xray: return "XRAY";
  }
  return "?";
}

std::string_view to_string(Split s) { return s == Split::Train ? "TRAIN" : "TEST"; }

std::string_view to_string(QuestionType q) { return q == QuestionType::Open ? "OPEN" : "CLOSED"; }

std::optional<Modality> parse_modality(std::string_view s) {
  const std::string u = to_upper(trim(s));
  if (u == "MRI") return Modality::Mri;
  if (u == "CT") return Modality::Ct;
  if (u == "XRAY" || u == "X-RAY" || u == "X_RAY") return Modality::Xray;
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view s) {
  const std::string u = to_upper(trim(s));
  if (u == "TRAIN") return Split::Train;
  if (u == "TEST") return Split::Test;
  return std::nullopt;
}

std::optional<QuestionType> parse_question_type(std::string_view s) {
  const std::string u = to_upper(trim(s));
  if (u == "OPEN") return QuestionType::Open;
  if (u == "CLOSED") return QuestionType::Closed;
  return std::nullopt;
}

std::size_t count_sentence_terminators(std::string_view text) {
  return static_cast<std::size_t>(
      std::count_if(text.begin(), text.end(), [](char c) { return c == '.' || c == '!' || c == '?'; }));
}

DatasetManifest::DatasetManifest(std::string name, std::vector<Sample> samples)
    : name_(std::move(name)), samples_(std::move(samples)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (!index_.emplace(s.id, i).second) {
      throw Error(Errc::DuplicateId, kModule, "duplicate sample id \"" + s.id + "\"", std::nullopt, s.id);
    }
    ++counts_.total;
    ++counts_.by_modality[s.modality];
    ++counts_.by_split[s.split];
    ++counts_.by_split_modality[{s.split, s.modality}];
  }
}

const Sample* DatasetManifest::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

// ---- normalization --------------------------------------------------------

namespace {

std::string strip_markup_chars(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<') {
      const std::size_t close = s.find('>', i + 1);
      const std::size_t reopen = s.find('<', i + 1);
      if (close != std::string_view::npos && (reopen == std::string_view::npos || close < reopen)) {
        out.push_back(' ');
        i = close;
        continue;
      }
    }
    switch (s[i]) {
      case '<': case '>': case '*': case '_': case '`': case '#':
      case '{': case '}': case '\\': case '[': case ']':
        break;
      default:
        out.push_back(s[i]);
    }
  }
  return out;
}

constexpr std::array<const char*, 20> kOnes = {
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen"};
constexpr std::array<const char*, 10> kTens = {"",      "",      "twenty",  "thirty", "forty",
                                               "fifty", "sixty", "seventy", "eighty", "ninety"};

void spell_below_thousand(unsigned n, std::vector<std::string>& words) {
  if (n >= 100) {
    words.emplace_back(kOnes[n / 100]);
    words.emplace_back("hundred");
    n %= 100;
    if (n == 0) return;
  }
  if (n >= 20) {
    words.emplace_back(kTens[n / 10]);
    if (n % 10 != 0) words.emplace_back(kOnes[n % 10]);
  } else {
    words.emplace_back(kOnes[n]);
  }
}

std::string spell_digits(std::string_view digits) {
  std::string out;
  for (char c : digits) {
    if (!out.empty()) out.push_back(' ');
    out += kOnes[static_cast<std::size_t>(c - '0')];
  }
  return out;
}

// Standalone numbers: digit runs (optionally with ",ddd" groups and a
// ".ddd" fraction) not glued to letters.
std::string spell_out_numbers(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const bool at_boundary = i == 0 || !is_word_char(s[i - 1]);
    if (!at_boundary || !is_digit(s[i])) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i;
    std::string integer;
    while (j < s.size() && is_digit(s[j])) integer.push_back(s[j++]);
    // thousands groups: "1,200"
    while (integer.size() <= 15 && j + 3 < s.size() && s[j] == ',' && is_digit(s[j + 1]) &&
           is_digit(s[j + 2]) && is_digit(s[j + 3]) && (j + 4 >= s.size() || !is_digit(s[j + 4]))) {
      integer.append(s.substr(j + 1, 3));
      j += 4;
    }
    std::string fraction;
    if (j + 1 < s.size() && s[j] == '.' && is_digit(s[j + 1])) {
      std::size_t k = j + 1;
      while (k < s.size() && is_digit(s[k])) fraction.push_back(s[k++]);
      if (k < s.size() && is_word_char(s[k])) {
        fraction.clear();
      } else {
        j = k;
      }
    }
    if (j < s.size() && is_word_char(s[j])) {
      // glued to letters, e.g. "T2w": keep verbatim
      out.append(s.substr(i, j - i));
      i = j;
      continue;
    }
    std::string words;
    if (integer.size() > 15) {
      words = spell_digits(integer);
    } else {
      words = spell_number(std::stoull(integer));
    }
    if (!fraction.empty()) words += " point " + spell_digits(fraction);
    out += words;
    i = j;
  }
  return out;
}

struct CompiledAbbreviation {
  std::string key_lower;
  std::string expansion;
  std::vector<std::size_t> key_offsets;  // where the key occurs as a word inside expansion
};

std::vector<std::size_t> word_occurrences(std::string_view haystack_lower, std::string_view needle_lower) {
  std::vector<std::size_t> out;
  if (needle_lower.empty()) return out;
  std::size_t pos = haystack_lower.find(needle_lower);
  while (pos != std::string_view::npos) {
    const bool left = pos == 0 || !is_word_char(haystack_lower[pos - 1]);
    const std::size_t end = pos + needle_lower.size();
    const bool right = end >= haystack_lower.size() || !is_word_char(haystack_lower[end]);
    if (left && right) out.push_back(pos);
    pos = haystack_lower.find(needle_lower, pos + 1);
  }
  return out;
}

std::string apply_abbreviations(std::string_view s,
                                const std::vector<std::pair<std::string, std::string>>& rules) {
  if (rules.empty()) return std::string(s);
  std::vector<CompiledAbbreviation> compiled;
  compiled.reserve(rules.size());
  for (const auto& [key, expansion] : rules) {
    CompiledAbbreviation c{to_lower(key), expansion, {}};
    c.key_offsets = word_occurrences(to_lower(expansion), c.key_lower);
    compiled.push_back(std::move(c));
  }
  const std::string lower = to_lower(s);
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_word_char(s[i]) || (i > 0 && is_word_char(s[i - 1]))) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_word_char(s[j])) ++j;
    const std::string_view word(lower.data() + i, j - i);
    const CompiledAbbreviation* hit = nullptr;
    for (const auto& c : compiled) {
      if (c.key_lower == word) {
        hit = &c;
        break;
      }
    }
    bool already_expanded = false;
    if (hit != nullptr) {
      // Skip when this word is part of an occurrence of its own expansion.
      const std::string exp_lower = to_lower(hit->expansion);
      for (std::size_t k : hit->key_offsets) {
        if (i >= k && i - k + exp_lower.size() <= lower.size() &&
            std::string_view(lower).substr(i - k, exp_lower.size()) == exp_lower) {
          already_expanded = true;
          break;
        }
      }
    }
    if (hit != nullptr && !already_expanded) {
      out += hit->expansion;
    } else {
      out.append(s.substr(i, j - i));
    }
    i = j;
  }
  return out;
}

bool is_alnum_word(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
  });
}

}  // namespace

std::string spell_number(unsigned long long n) {
  if (n == 0) return "zero";
  static constexpr std::array<const char*, 5> kScales = {"", "thousand", "million", "billion",
                                                         "trillion"};
  std::vector<unsigned> groups;
  while (n > 0) {
    groups.push_back(static_cast<unsigned>(n % 1000));
    n /= 1000;
  }
  if (groups.size() > kScales.size()) return spell_digits(std::to_string(n));
  std::vector<std::string> words;
  for (std::size_t g = groups.size(); g-- > 0;) {
    if (groups[g] == 0) continue;
    spell_below_thousand(groups[g], words);
    if (g > 0) words.emplace_back(kScales[g]);
  }
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

NormalizationRuleSet::NormalizationRuleSet(std::vector<std::pair<std::string, std::string>> abbreviations,
                                           NumberStyle number_style, bool strip_markup)
    : number_style_(number_style), strip_markup_(strip_markup) {
  std::set<std::string> seen;
  for (auto& [key, expansion] : abbreviations) {
    std::string k = trim(key);
    if (!is_alnum_word(k)) {
      throw Error(Errc::ConfigError, kModule,
                  "abbreviation key \"" + key + "\" must be a single alphanumeric word");
    }
    if (!seen.insert(to_lower(k)).second) {
      throw Error(Errc::ConfigError, kModule, "abbreviation key \"" + k + "\" is duplicated (case-insensitive)");
    }
    std::string e = expansion;
    if (strip_markup_) e = strip_markup_chars(e);
    if (number_style_ == NumberStyle::SpellOut) e = spell_out_numbers(e);
    e = collapse_whitespace(e);
    if (e.empty()) throw Error(Errc::ConfigError, kModule, "abbreviation \"" + k + "\" has an empty expansion");
    abbreviations_.emplace_back(std::move(k), std::move(e));
  }
  for (const auto& [key, expansion] : abbreviations_) {
    const std::string exp_lower = to_lower(expansion);
    if (iequals(expansion, key)) continue;
    for (const auto& [other, unused] : abbreviations_) {
      if (!word_occurrences(exp_lower, to_lower(other)).empty()) {
        throw Error(Errc::ConfigError, kModule,
                    "expansion of \"" + key + "\" contains the abbreviation key \"" + other + "\"");
      }
    }
  }
}

NormalizationRuleSet NormalizationRuleSet::from_json(const json& j) {
  std::vector<std::pair<std::string, std::string>> abbreviations;
  if (j.contains("abbreviations")) {
    for (const auto& [k, v] : j.at("abbreviations").items()) {
      abbreviations.emplace_back(k, v.get<std::string>());
    }
  }
  NumberStyle style = NumberStyle::KeepDigits;
  if (j.contains("number_style")) {
    const std::string s = to_upper(j.at("number_style").get<std::string>());
    if (s == "SPELL_OUT") {
      style = NumberStyle::SpellOut;
    } else if (s != "KEEP_DIGITS") {
      throw Error(Errc::ConfigError, kModule, "unknown number_style " + s);
    }
  }
  const bool strip = j.value("strip_markup", true);
  return NormalizationRuleSet(std::move(abbreviations), style, strip);
}

json NormalizationRuleSet::to_json() const {
  json abbr = json::object();
  for (const auto& [k, v] : abbreviations_) abbr[k] = v;
  return {{"abbreviations", abbr},
          {"number_style", number_style_ == NumberStyle::SpellOut ? "SPELL_OUT" : "KEEP_DIGITS"},
          {"strip_markup", strip_markup_}};
}

std::string normalize_question(std::string_view text, const NormalizationRuleSet& rules) {
  std::string s(text);
  if (rules.strip_markup()) s = strip_markup_chars(s);
  if (rules.number_style() == NumberStyle::SpellOut) s = spell_out_numbers(s);
  s = apply_abbreviations(s, rules.abbreviations());
  return collapse_whitespace(s);
}

QuestionType classify_question(std::string_view text, std::optional<QuestionType> override_type) {
  if (override_type) return *override_type;
  static const std::set<std::string, std::less<>> kAuxiliaries = {
      "is",  "are",   "was",    "were", "am",    "do",   "does", "did",  "can",  "could", "will",
      "would", "should", "shall", "has", "have", "had", "may",  "might", "must", "isn't", "aren't",
      "doesn't", "don't", "didn't", "wasn't", "weren't", "hasn't", "haven't"};
  const std::string lower = to_lower(collapse_whitespace(text));
  const auto words = split_whitespace(lower);
  if (words.empty()) return QuestionType::Open;
  std::string first = words.front();
  while (!first.empty() && !is_word_char(first.back()) && first.back() != '\'') first.pop_back();
  if (kAuxiliaries.count(first) != 0) return QuestionType::Closed;

  // Enumerated options: the clause after the last ':' or ',' offers "X or Y",
  // or a "which" question lists alternatives.
  const std::size_t cut = lower.find_last_of(":,");
  const std::string tail = cut == std::string::npos ? std::string() : lower.substr(cut + 1);
  if (!tail.empty() && !word_occurrences(tail, "or").empty()) return QuestionType::Closed;
  if (first == "which" && !word_occurrences(lower, "or").empty()) return QuestionType::Closed;
  return QuestionType::Open;
}

// ---- loading --------------------------------------------------------------

namespace {

std::string require_string(const json& rec, const char* field, std::size_t line, const std::string& where) {
  if (!rec.contains(field) || rec.at(field).is_null()) {
    throw Error(Errc::MissingField, kModule, where + ": missing field \"" + field + "\"", line);
  }
  const json& v = rec.at(field);
  if (!v.is_string()) {
    throw Error(Errc::MalformedRecord, kModule, where + ": field \"" + field + "\" must be a string", line);
  }
  return v.get<std::string>();
}

template <typename T, typename Parse>
T require_enum(const json& rec, const char* field, std::size_t line, const std::string& where, Parse parse) {
  const std::string raw = require_string(rec, field, line, where);
  auto v = parse(raw);
  if (!v) {
    throw Error(Errc::UnknownEnum, kModule,
                where + ": unknown " + field + " \"" + raw + "\"", line);
  }
  return *v;
}

const std::set<std::string, std::less<>> kKnownFields = {
    "id", "image", "modality", "organ", "question", "answer", "split", "question_type", "audio"};

Sample parse_sample(const json& rec, std::size_t line, const std::string& where, const LoadOptions& opt) {
  Sample s;
  s.id = require_string(rec, "id", line, where);
  if (trim(s.id).empty()) throw Error(Errc::InvalidSample, kModule, where + ": empty id", line);
  s.image_path = require_string(rec, "image", line, where);
  s.modality = require_enum<Modality>(rec, "modality", line, where, parse_modality);
  s.organ = require_string(rec, "organ", line, where);
  s.question_text = require_string(rec, "question", line, where);
  s.answer_text = require_string(rec, "answer", line, where);
  s.split = require_enum<Split>(rec, "split", line, where, parse_split);
  std::optional<QuestionType> declared;
  if (rec.contains("question_type") && !rec.at("question_type").is_null()) {
    declared = require_enum<QuestionType>(rec, "question_type", line, where, parse_question_type);
  }
  if (rec.contains("audio") && !rec.at("audio").is_null()) {
    s.audio_ref = require_string(rec, "audio", line, where);
  }
  for (const auto& [k, v] : rec.items()) {
    if (kKnownFields.count(k) == 0) s.extra[k] = v;
  }

  if (trim(s.question_text).empty()) {
    throw Error(Errc::InvalidSample, kModule, where + ": empty question", line, s.id);
  }
  if (trim(s.answer_text).empty()) {
    throw Error(Errc::InvalidSample, kModule, where + ": empty answer", line, s.id);
  }
  if (s.image_path.empty()) throw Error(Errc::InvalidSample, kModule, where + ": empty image path", line, s.id);
  if (s.audio_ref && !ends_with(to_lower(*s.audio_ref), ".wav")) {
    throw Error(Errc::InvalidSample, kModule, where + ": audio reference must end in .wav", line, s.id);
  }
  s.question_type = classify_question(s.question_text, declared);
  if (opt.require_answer_structure && s.question_type == QuestionType::Open &&
      count_sentence_terminators(s.answer_text) < 2) {
    throw Error(Errc::InvalidSample, kModule,
                where + ": open-question answer needs a direct answer sentence followed by reasoning",
                line, s.id);
  }
  s.normalized_question_text = normalize_question(s.question_text, opt.rules);

  if (opt.strict) {
    const fs::path rel(s.image_path);
    if (rel.is_absolute()) {
      throw Error(Errc::MissingImage, kModule, where + ": image path must be relative", line, s.id);
    }
    const fs::path root = fs::weakly_canonical(opt.dataset_root);
    const fs::path full = fs::weakly_canonical(root / rel);
    const auto [root_end, unused] = std::mismatch(root.begin(), root.end(), full.begin(), full.end());
    if (root_end != root.end() || !fs::is_regular_file(full)) {
      throw Error(Errc::MissingImage, kModule,
                  where + ": image \"" + s.image_path + "\" does not resolve under the dataset root",
                  line, s.id);
    }
  }
  return s;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view content, std::string name, const LoadOptions& options) {
  std::vector<Sample> samples;
  std::map<std::string, std::size_t> first_line;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      throw Error(Errc::MalformedRecord, kModule, where + ": not a JSON object", line_no);
    }
    Sample s = parse_sample(rec, line_no, where, options);
    auto [it, inserted] = first_line.emplace(s.id, line_no);
    if (!inserted) {
      throw Error(Errc::DuplicateId, kModule,
                  where + ": duplicate id \"" + s.id + "\" (first seen at line " +
                      std::to_string(it->second) + ")",
                  line_no, s.id);
    }
    samples.push_back(std::move(s));
  }
  return DatasetManifest(std::move(name), std::move(samples));
}

DatasetManifest load_manifest(const fs::path& path, const LoadOptions& options) {
  std::string content;
  try {
    content = read_file(path);
  } catch (const Error& e) {
    throw Error(Errc::IoError, kModule, e.what());
  }
  return parse_manifest(content, path.filename().string(), options);
}

namespace {

// Wire field order is kept stable so manifests diff cleanly.
nlohmann::ordered_json ordered_record(const Sample& s) {
  nlohmann::ordered_json rec;
  rec["id"] = s.id;
  rec["image"] = s.image_path;
  rec["modality"] = to_string(s.modality);
  rec["organ"] = s.organ;
  rec["question"] = s.question_text;
  rec["answer"] = s.answer_text;
  rec["split"] = to_string(s.split);
  rec["question_type"] = to_string(s.question_type);
  if (s.audio_ref) rec["audio"] = *s.audio_ref;
  for (const auto& [k, v] : s.extra.items()) rec[k] = v;
  return rec;
}

}  // namespace

json sample_to_record(const Sample& s) { return json::parse(ordered_record(s).dump()); }

std::string serialize_manifest(const DatasetManifest& m) {
  std::string out;
  for (const Sample& s : m.samples()) {
    out += ordered_record(s).dump();
    out.push_back('\n');
  }
  return out;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  write_file_atomic(path, serialize_manifest(m));
}

// ---- selection ------------------------------------------------------------

bool SampleFilter::matches(const Sample& s) const {
  if (split && s.split != *split) return false;
  if (modality && s.modality != *modality) return false;
  if (organ && !iequals(s.organ, *organ)) return false;
  if (question_type && s.question_type != *question_type) return false;
  return true;
}

SampleFilter SampleFilter::from_json(const json& j) {
  SampleFilter f;
  auto get = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) {
      throw Error(Errc::MalformedRecord, kModule, std::string("filter field \"") + key + "\" must be a string");
    }
    return j.at(key).get<std::string>();
  };
  auto parse_or_throw = [](const std::string& raw, auto parse, const char* what) {
    auto v = parse(raw);
    if (!v) throw Error(Errc::UnknownEnum, kModule, std::string("unknown ") + what + " \"" + raw + "\"");
    return *v;
  };
  if (auto v = get("split")) f.split = parse_or_throw(*v, parse_split, "split");
  if (auto v = get("modality")) f.modality = parse_or_throw(*v, parse_modality, "modality");
  if (auto v = get("organ")) f.organ = *v;
  if (auto v = get("question_type")) f.question_type = parse_or_throw(*v, parse_question_type, "question_type");
  return f;
}

std::string SampleFilter::describe() const {
  std::vector<std::string> parts;
  if (split) parts.push_back("split=" + std::string(to_string(*split)));
  if (modality) parts.push_back("modality=" + std::string(to_string(*modality)));
  if (organ) parts.push_back("organ=" + *organ);
  if (question_type) parts.push_back("question_type=" + std::string(to_string(*question_type)));
  if (parts.empty()) return "all";
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ",";
    out += p;
  }
  return out;
}

std::vector<Sample> filter_samples(const DatasetManifest& m, const SampleFilter& filter) {
  return filter_samples(m, [&](const Sample& s) { return filter.matches(s); });
}

std::vector<Sample> filter_samples(const DatasetManifest& m,
                                   const std::function<bool(const Sample&)>& predicate) {
  std::vector<Sample> out;
  for (const Sample& s : m.samples()) {
    if (predicate(s)) out.push_back(s);
  }
  return out;
}

// ---- count validation -----------------------------------------------------

CountSpec parse_count_spec(std::string_view content) {
  CountSpec spec;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      throw Error(Errc::MalformedRecord, kModule,
                  "count spec line " + std::to_string(line_no) + ": not a JSON object", line_no);
    }
    CountExpectation e;
    try {
      e.filter = SampleFilter::from_json(rec);
      if (rec.contains("count")) e.count = rec.at("count").get<std::size_t>();
      if (rec.contains("percent")) e.percent = rec.at("percent").get<double>();
    } catch (const Error& err) {
      throw Error(err.code(), kModule, "count spec line " + std::to_string(line_no) + ": " + err.what(), line_no);
    } catch (const json::exception& err) {
      throw Error(Errc::MalformedRecord, kModule,
                  "count spec line " + std::to_string(line_no) + ": " + err.what(), line_no);
    }
    if (!e.count && !e.percent) {
      throw Error(Errc::MissingField, kModule,
                  "count spec line " + std::to_string(line_no) + ": needs \"count\" or \"percent\"", line_no);
    }
    e.label = rec.contains("label") ? rec.at("label").get<std::string>() : e.filter.describe();
    spec.push_back(std::move(e));
  }
  return spec;
}

CountSpec load_count_spec(const fs::path& path) { return parse_count_spec(read_file(path)); }

CountReport validate_counts(const DatasetManifest& m, const CountSpec& expected) {
  CountReport report;
  const double total = static_cast<double>(m.size());
  for (const CountExpectation& e : expected) {
    const auto matched = static_cast<double>(
        std::count_if(m.samples().begin(), m.samples().end(),
                      [&](const Sample& s) { return e.filter.matches(s); }));
    if (e.count) {
      CountCheck c;
      c.label = e.label;
      c.kind = CountCheck::Kind::Count;
      c.expected = static_cast<double>(*e.count);
      c.actual = matched;
      c.delta = c.actual - c.expected;
      c.pass = c.delta == 0;
      report.checks.push_back(c);
    }
    if (e.percent) {
      CountCheck c;
      c.label = e.label;
      c.kind = CountCheck::Kind::Percent;
      c.expected = *e.percent;
      c.actual = total > 0 ? std::round(matched / total * 1000.0) / 10.0 : 0.0;
      c.delta = c.actual - c.expected;
      c.pass = std::abs(c.delta) <= kPercentTolerance + 1e-9;
      report.checks.push_back(c);
    }
  }
  return report;
}

bool CountReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CountCheck& c) { return c.pass; });
}

json CountReport::to_json() const {
  json arr = json::array();
  for (const auto& c : checks) {
    const bool pct = c.kind == CountCheck::Kind::Percent;
    arr.push_back({{"label", c.label},
                   {"kind", pct ? "percent" : "count"},
                   {"expected", c.expected},
                   {"actual", c.actual},
                   {"delta", pct ? std::round(c.delta * 10.0) / 10.0 : c.delta},
                   {"pass", c.pass}});
  }
  return {{"checks", arr}, {"all_pass", all_pass()}};
}

std::string CountReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    const bool pct = c.kind == CountCheck::Kind::Percent;
    const int decimals = pct ? 1 : 0;
    os << (c.pass ? "PASS " : "FAIL ") << c.label << (pct ? " [%]" : "") << ": expected "
       << format_fixed(c.expected, decimals) << ", actual " << format_fixed(c.actual, decimals);
    if (!c.pass) os << " (delta " << (c.delta > 0 ? "+" : "") << format_fixed(c.delta, decimals) << ")";
    os << '\n';
  }
  return os.str();
}

}  // namespace medvqa
