#include <doctest.h>

#include <random>

#include "medvqa/dataset.hpp"
#include "medvqa/error.hpp"
#include "medvqa/fixtures.hpp"
#include "support.hpp"

using namespace medvqa;

namespace {

std::string record(const std::string& id, const std::string& extra = "") {
  return R"({"id":")" + id +
         R"(","image":"images/a.png","modality":"CT","organ":"lung","question":"What is wrong?",)"
         R"("answer":"A nodule. It is bright and round.","split":"TEST")" + extra + "}\n";
}

Errc code_of(const std::string& content, const LoadOptions& opts = {}) {
  try {
    parse_manifest(content, "m", opts);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::BadRequest;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("reference fixture reproduces the published tallies") {
  const auto m = reference_manifest();
  CHECK(m.size() == 866);
  CHECK(m.counts().by_modality.at(Modality::Mri) == 194);
  CHECK(m.counts().by_modality.at(Modality::Ct) == 143);
  CHECK(m.counts().by_modality.at(Modality::Xray) == 529);
  CHECK(m.counts().by_split.at(Split::Train) == 716);
  CHECK(m.counts().by_split.at(Split::Test) == 150);
  CHECK(m.counts().by_split_modality.at({Split::Test, Modality::Mri}) == 32);
  CHECK(m.counts().by_split_modality.at({Split::Test, Modality::Ct}) == 21);
  CHECK(m.counts().by_split_modality.at({Split::Test, Modality::Xray}) == 97);

  const auto report = validate_counts(m, parse_count_spec(reference_count_spec()));
  CHECK(report.all_pass());
  CHECK(report.checks.size() >= 12);
}

TEST_CASE("filters select the expected subsets") {
  const auto m = reference_manifest();
  SampleFilter test;
  test.split = Split::Test;
  CHECK(filter_samples(m, test).size() == 150);
  test.modality = Modality::Ct;
  CHECK(filter_samples(m, test).size() == 21);
}

TEST_CASE("count mismatch is reported with a signed delta") {
  const auto m = demo_manifest(20);
  const auto spec = parse_count_spec(R"({"label":"total","count":21})" "\n");
  const auto report = validate_counts(m, spec);
  REQUIRE(report.checks.size() == 1);
  CHECK_FALSE(report.all_pass());
  CHECK(report.checks[0].delta == doctest::Approx(-1));
}

TEST_CASE("manifest round trip preserves samples and unknown fields") {
  const auto m = reference_manifest();
  const auto back = parse_manifest(serialize_manifest(m), m.name());
  CHECK(back == m);
  const auto one = parse_manifest(record("x", R"(,"source":"scan-7")"), "m");
  CHECK(one.samples()[0].extra.at("source") == "scan-7");
  CHECK(serialize_manifest(one).find("scan-7") != std::string::npos);
}

TEST_CASE("record errors carry stable codes") {
  CHECK(code_of("{not json}\n") == Errc::MalformedRecord);
  CHECK(code_of(record("a") + record("a")) == Errc::DuplicateId);
  CHECK(code_of(R"({"id":"a"})" "\n") == Errc::MissingField);
  std::string pet = record("a");
  pet.replace(pet.find("\"CT\""), 4, "\"PET\"");
  CHECK(code_of(pet) == Errc::UnknownEnum);
}

TEST_CASE("error reports the offending line") {
  try {
    parse_manifest(record("a") + "[1]\n", "m");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.line() == 2);
    CHECK(e.qualified_code() == "dataset.MALFORMED_RECORD");
  }
}

TEST_CASE("open answers need two sentences unless the check is off") {
  const std::string one_sentence = R"({"id":"a","image":"i.png","modality":"CT","organ":"lung",)"
                                   R"("question":"Describe the lesion.","answer":"A nodule","split":"TEST","question_type":"OPEN"})"
                                   "\n";
  CHECK(code_of(one_sentence) == Errc::InvalidSample);
  LoadOptions lax;
  lax.require_answer_structure = false;
  CHECK(parse_manifest(one_sentence, "m", lax).size() == 1);
}

TEST_CASE("strict mode requires images under the dataset root") {
  testing::TempDir dir;
  LoadOptions strict;
  strict.strict = true;
  strict.dataset_root = dir.path();
  CHECK(code_of(record("a"), strict) == Errc::MissingImage);
}

TEST_CASE("normalization examples") {
  const NormalizationRuleSet rules({{"CT", "C T"}, {"MRI", "M R I"}}, NumberStyle::SpellOut, true);
  CHECK(normalize_question("Is the <b>MRI</b> showing 2 lesions?", rules) == "Is the M R I showing two lesions?");
  CHECK(spell_number(0) == "zero");
  CHECK(spell_number(21) == "twenty one");
  CHECK(spell_number(115) == "one hundred fifteen");
}

TEST_CASE("normalization is idempotent") {
  const NormalizationRuleSet rules({{"ct", "C T"}, {"xr", "X ray"}}, NumberStyle::SpellOut, true);
  std::mt19937 rng(7);
  const std::vector<std::string> words = {"ct", "XR", "lung", "3", "<i>mass</i>", "42", "left,", "right?", "  "};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int k = 0; k < 8; ++k) text += words[pick(rng)] + " ";
    const std::string once = normalize_question(text, rules);
    CHECK(normalize_question(once, rules) == once);
  }
}

TEST_CASE("rule sets that would not be idempotent are rejected") {
  CHECK_THROWS_AS(NormalizationRuleSet({{"ct", "ct scan"}}, NumberStyle::KeepDigits, true), Error);
}

TEST_CASE("question classification") {
  CHECK(classify_question("Is there a fracture?") == QuestionType::Closed);
  CHECK(classify_question("Does the liver look enlarged?") == QuestionType::Closed);
  CHECK(classify_question("Is the lesion on the left or the right side?") == QuestionType::Closed);
  CHECK(classify_question("What abnormality is seen in the lung?") == QuestionType::Open);
  CHECK(classify_question("Is there a fracture?", QuestionType::Open) == QuestionType::Open);
}

TEST_CASE("sentence terminators") {
  CHECK(count_sentence_terminators("One. Two! Three?") == 3);
  CHECK(count_sentence_terminators("none") == 0);
}

}  // TEST_SUITE
