#include <doctest.h>

#include <random>

#include "medvqa/asr.hpp"
#include "medvqa/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace medvqa;

TEST_SUITE("asr") {

TEST_CASE("cat sat fixture") {
  const auto ref = word_units("the cat sat on the mat");
  const auto hyp = word_units("the cat sit on mat");
  const EditCounts e = edit_distance(ref, hyp);
  CHECK(e == EditCounts{2, 1, 1, 0});
  CHECK(wer({"p", "the cat sat on the mat", "the cat sit on mat"}) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("character error rate fixture") {
  CHECK(cer({"p", "abc", "axc"}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(cer({"p", "abc", "abc"}) == 0.0);
}

TEST_CASE("random pairs agree with the recursive oracle") {
  std::mt19937 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const auto ref = testing::random_tokens(rng, 10);
    const auto hyp = testing::random_tokens(rng, 10);
    const EditCounts e = edit_distance(ref, hyp);
    CHECK(e.distance == oracle::edit_distance(ref, hyp));
    CHECK(e.substitutions + e.deletions + e.insertions == e.distance);
    CHECK(static_cast<long>(e.deletions) - static_cast<long>(e.insertions) ==
          static_cast<long>(ref.size()) - static_cast<long>(hyp.size()));
    if (!ref.empty()) {
      const double expected = static_cast<double>(oracle::edit_distance(ref, hyp)) / ref.size();
      CHECK(wer({"r", testing::join(ref), testing::join(hyp)}) == expected);
    }
  }
}

TEST_CASE("distance is symmetric and zero only for equal sequences") {
  std::mt19937 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto a = testing::random_tokens(rng, 8, 3);
    const auto b = testing::random_tokens(rng, 8, 3);
    CHECK(edit_distance(a, b).distance == edit_distance(b, a).distance);
    CHECK((edit_distance(a, b).distance == 0) == (a == b));
  }
}

TEST_CASE("tokenization") {
  CHECK(word_units("Hello, World!") == std::vector<std::string>{"hello", "world"});
  AsrTokenization keep{false, false};
  CHECK(word_units("Hello, World!", keep) == std::vector<std::string>{"Hello,", "World!"});
  CHECK(char_units("ab  c").size() == 4);
}

TEST_CASE("empty reference is an error") {
  CHECK_THROWS_AS(wer({"p", "  ", "x"}), Error);
}

TEST_CASE("corpus rates pool distances and also report the mean") {
  const auto r = corpus_error_rates({{"a", "one two", "one"}, {"b", "one two three four", "one two three four"}});
  CHECK(r.wer == doctest::Approx(1.0 / 6.0));
  CHECK(r.mean_wer == doctest::Approx(0.25));
  const auto back = ErrorRateReport::from_json(r.to_json());
  CHECK(back.wer == r.wer);
  CHECK(back.pairs.size() == 2);
}

}  // TEST_SUITE
