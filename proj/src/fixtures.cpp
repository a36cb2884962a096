#include "medvqa/fixtures.hpp"

#include <array>
#include <cstdio>
#include <random>

namespace medvqa {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 5> kOrgans = {"heart", "liver", "kidney", "lung", "spleen"};

struct Finding {
  const char* name;
  const char* sign;
};

constexpr std::array<Finding, 6> kFindings = {{
    {"a mass", "a well-defined region of abnormal density distorts the normal contour"},
    {"an effusion", "fluid collects along the dependent margin and blunts the normal angle"},
    {"a cyst", "a round lesion with a thin wall and homogeneous content is visible"},
    {"calcification", "small bright foci appear within the tissue"},
    {"inflammation", "the tissue is swollen and its borders look indistinct"},
    {"an infarct", "a wedge-shaped area shows reduced enhancement"},
}};

constexpr std::array<const char*, 4> kLocations = {"upper left region", "lower right region", "central portion",
                                                   "posterior margin"};

const char* modality_phrase(Modality m) {
  switch (m) {
    case Modality::Mri: return "MRI";
    case Modality::Ct: return "CT scan";
    case Modality::Xray: return "X-ray";
  }
  return "image";
}

Sample make_sample(std::mt19937& rng, std::size_t index, Split split, Modality modality) {
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  const char* organ = kOrgans[pick(kOrgans.size())];
  const Finding& f = kFindings[pick(kFindings.size())];
  const char* loc = kLocations[pick(kLocations.size())];
  const std::string mod = modality_phrase(modality);

  char id[64];
  std::snprintf(id, sizeof id, "%s-%s-%04zu", split == Split::Train ? "train" : "test",
                to_lower(to_string(modality)).c_str(), index);

  Sample s;
  s.id = id;
  s.image_path = "images/" + s.id + ".png";
  s.modality = modality;
  s.organ = organ;
  s.split = split;
  switch (pick(4)) {
    case 0: {
      s.question_text = "What abnormality is seen in the " + std::string(organ) + " on this " + mod + "?";
      s.answer_text = "The image shows " + std::string(f.name) + " in the " + organ + ". This is suggested because " +
                      f.sign + ".";
      s.question_type = QuestionType::Open;
      break;
    }
    case 1: {
      s.question_text = "Where is the abnormality located in the " + std::string(organ) + "?";
      s.answer_text = "The abnormality is located in the " + std::string(loc) + " of the " + organ + ". " +
                      "It is identified because " + f.sign + ".";
      s.question_type = QuestionType::Open;
      break;
    }
    case 2: {
      const bool yes = pick(2) == 0;
      s.question_text = "Is there " + std::string(f.name) + " in the " + organ + "?";
      s.answer_text = yes ? "Yes, there is " + std::string(f.name) + " in the " + organ + ". The finding is supported because " +
                                f.sign + "."
                          : "No, there is no " + std::string(f.name).substr(std::string(f.name).find(' ') + 1) +
                                " in the " + organ + ". The " + organ + " appears normal without focal change.";
      s.question_type = QuestionType::Closed;
      s.extra["short_answer"] = yes ? "yes" : "no";
      break;
    }
    default: {
      const bool first = pick(2) == 0;
      s.question_text = "Is the abnormal " + std::string(organ) + " on the left or the right side?";
      const std::string side = first ? "left" : "right";
      s.answer_text = "The abnormality is on the " + side + " side. The " + side + " " + organ +
                      " shows that " + f.sign + ".";
      s.question_type = QuestionType::Closed;
      s.extra["short_answer"] = side;
      break;
    }
  }
  s.normalized_question_text = normalize_question(s.question_text, NormalizationRuleSet());
  return s;
}

struct Cell {
  Split split;
  Modality modality;
  std::size_t count;
};

DatasetManifest generate(const std::string& name, const std::vector<Cell>& cells, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<Sample> samples;
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < c.count; ++i) samples.push_back(make_sample(rng, i + 1, c.split, c.modality));
  }
  return DatasetManifest(name, std::move(samples));
}

// Smallest valid 1x1 grayscale PNG.
constexpr unsigned char kPng[] = {0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49,
                                  0x48, 0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00,
                                  0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44,
                                  0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x00, 0x00, 0x00, 0x02, 0x00, 0x01, 0x48,
                                  0xaf, 0xa4, 0x71, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42,
                                  0x60, 0x82};

}  // namespace

DatasetManifest reference_manifest() {
  return generate("reasoning-abnormality-reference",
                  {{Split::Train, Modality::Mri, 162},
                   {Split::Train, Modality::Ct, 122},
                   {Split::Train, Modality::Xray, 432},
                   {Split::Test, Modality::Mri, 32},
                   {Split::Test, Modality::Ct, 21},
                   {Split::Test, Modality::Xray, 97}},
                  866);
}

std::string reference_count_spec() {
  return R"({"label":"total","count":866}
{"label":"MRI","modality":"MRI","count":194,"percent":22.4}
{"label":"CT","modality":"CT","count":143,"percent":16.5}
{"label":"X-ray","modality":"XRAY","count":529,"percent":61.1}
{"label":"train","split":"TRAIN","count":716}
{"label":"test","split":"TEST","count":150}
{"label":"train MRI","split":"TRAIN","modality":"MRI","count":162}
{"label":"train CT","split":"TRAIN","modality":"CT","count":122}
{"label":"train X-ray","split":"TRAIN","modality":"XRAY","count":432}
{"label":"test MRI","split":"TEST","modality":"MRI","count":32}
{"label":"test CT","split":"TEST","modality":"CT","count":21}
{"label":"test X-ray","split":"TEST","modality":"XRAY","count":97}
)";
}

DatasetManifest demo_manifest(std::size_t n) {
  const std::size_t mri = n / 5;
  const std::size_t ct = n / 5;
  return generate("demo", {{Split::Test, Modality::Mri, mri}, {Split::Test, Modality::Ct, ct},
                           {Split::Test, Modality::Xray, n - mri - ct}},
                  20);
}

std::vector<TranscriptPair> demo_transcripts(const DatasetManifest& manifest) {
  std::vector<TranscriptPair> out;
  std::size_t i = 0;
  for (const auto& s : manifest.samples()) {
    std::string hyp = s.normalized_question_text;
    // Every third transcript drops a word, every fifth swaps one.
    auto words = split_whitespace(hyp);
    if (i % 3 == 0 && words.size() > 3) words.erase(words.begin() + 2);
    if (i % 5 == 0 && words.size() > 1) words[1] = words[1] == "the" ? "a" : "the";
    hyp.clear();
    for (const auto& w : words) hyp += (hyp.empty() ? "" : " ") + w;
    out.push_back({s.id, s.normalized_question_text, hyp});
    ++i;
  }
  return out;
}

void write_fixture_dataset(const fs::path& root, bool reference, std::size_t demo_size) {
  const DatasetManifest m = reference ? reference_manifest() : demo_manifest(demo_size);
  fs::create_directories(root / "images");
  write_manifest(root / "manifest.jsonl", m);
  if (reference) write_file_atomic(root / "counts.jsonl", reference_count_spec());
  else {
    std::string spec = json({{"label", "total"}, {"count", m.size()}}).dump() + "\n";
    spec += json({{"label", "test"}, {"split", "TEST"}, {"count", m.size()}}).dump() + "\n";
    write_file_atomic(root / "counts.jsonl", spec);
  }
  std::string pairs;
  for (const auto& p : demo_transcripts(m)) {
    pairs += json({{"id", p.id}, {"reference", p.reference}, {"hypothesis", p.hypothesis}}).dump() + "\n";
  }
  write_file_atomic(root / "transcripts.jsonl", pairs);
  const std::string png(reinterpret_cast<const char*>(kPng), sizeof kPng);
  for (const auto& s : m.samples()) write_file_atomic(root / s.image_path, png);
}

}  // namespace medvqa
