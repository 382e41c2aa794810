#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "qc/error.hpp"
#include "qc/readability.hpp"
#include "qc/util.hpp"

#include <json.hpp>

namespace {

std::map<std::string, std::string> reference_quotes() {
  std::map<std::string, std::string> out;
  std::ifstream in(oracle::data_dir() / "reference_quotes.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out[j["id"]] = j["quote"];
  }
  return out;
}

}  // namespace

TEST_SUITE("readability") {
  TEST_CASE("syllable heuristic on common patterns") {
    const std::pair<const char*, std::size_t> cases[] = {
        {"the", 1},       {"a", 1},        {"table", 2},      {"little", 2},    {"weather", 2},
        {"doesn't", 2},   {"didn't", 2},   {"statement", 2},  {"definitely", 4}, {"jumped", 1},
        {"wanted", 2},    {"needed", 2},   {"boxes", 2},      {"makes", 1},     {"agree", 2},
        {"correctly", 3}, {"understand", 3}, {"assistant", 3}, {"Always", 2},   {"I", 1},
        {"delicious", 3}, {"I’d", 1},     {"say.", 1},       {"1984", 1}};
    for (const auto& [word, n] : cases) {
      CAPTURE(word);
      CHECK(qc::count_syllables(word) == n);
    }
    CHECK_THROWS_AS(qc::count_syllables("  "), qc::PreconditionError);
  }

  TEST_CASE("syllable count is at least one for any non-blank token") {
    std::mt19937_64 rng(2);
    const std::string alphabet = "aeiouybcdlnst'";
    for (int i = 0; i < 3000; ++i) {
      std::string w;
      const std::size_t len = 1 + rng() % 10;
      for (std::size_t j = 0; j < len; ++j) w += alphabet[rng() % alphabet.size()];
      CHECK(qc::count_syllables(w) >= 1);
    }
  }

  TEST_CASE("formulas") {
    CHECK(qc::flesch_reading_ease(10, 1, 14) == doctest::Approx(206.835 - 10.15 - 84.6 * 1.4));
    CHECK(qc::coleman_liau_index(40, 10, 1) == doctest::Approx(0.0588 * 400 - 0.296 * 10 - 15.8));
    CHECK(qc::automated_readability_index(45, 10, 1) == doctest::Approx(4.71 * 4.5 + 5 - 21.43));
  }

  TEST_CASE("profile counts") {
    const auto p = qc::profile("Hi there. How are you today?  Fine!");
    CHECK(p.sentence_count == 3);
    CHECK(p.word_count == 7);
    CHECK(p.char_length == 35);
    CHECK(p.nonspace_count == 28);
    CHECK(p.letter_count == 25);
    CHECK(p.flesch_reading_ease ==
          qc::flesch_reading_ease(7, 3, static_cast<double>(p.syllable_count)));
    // A text without terminal punctuation is one sentence; punctuation-only tokens are not words.
    const auto q = qc::profile("well - maybe");
    CHECK(q.sentence_count == 1);
    CHECK(q.word_count == 2);
    CHECK_THROWS_AS(qc::profile("   "), qc::PreconditionError);
    CHECK_THROWS_AS(qc::profile("... !"), qc::PreconditionError);
  }

  TEST_CASE("difficult words use the familiar-word list and need two syllables") {
    qc::EasyWords easy(std::unordered_set<std::string>{"weather", "assistant"});
    const auto p = qc::profile("The weather assistant seems curious, curious!", easy);
    CHECK(p.difficult_words == std::vector<std::string>{"curious"});
    CHECK(p.difficult_word_count == 1);
    CHECK(qc::EasyWords::bundled().size() > 2500);
    CHECK(qc::EasyWords::bundled().contains("weather"));
  }

  TEST_CASE("reference quotes with hand-verified rows") {
    const auto quotes = reference_quotes();
    REQUIRE(quotes.size() == 15);
    const auto q1 = qc::profile(quotes.at("Quote1"));
    CHECK(q1.char_length == 51);
    CHECK(q1.syllable_count == 14);
    CHECK(q1.difficult_word_count == 1);
    CHECK(q1.difficult_words == std::vector<std::string>{"correctly"});
    const auto q2 = qc::profile(quotes.at("Quote2"));
    CHECK(q2.char_length == 55);
    CHECK(q2.syllable_count == 14);
    CHECK(q2.difficult_word_count == 1);
  }

  TEST_CASE("conformance report lists deviations first") {
    const auto quotes = reference_quotes();
    std::map<std::string, qc::ReadabilityProfile> profiles;
    for (const auto& [id, q] : quotes) profiles.emplace(id, qc::profile(q));
    const auto rows = qc::parse_reference_table(qc::read_file(oracle::data_dir() / "reference_readability.csv"));
    REQUIRE(rows.size() == 15);
    CHECK(rows[0].difficulty_avg == 1.5);
    const auto checks = qc::conformance_checks(profiles, rows);
    CHECK(checks.size() == 15 * 6);
    const auto csv = qc::conformance_report_csv(checks);
    const auto parsed = qc::parse_csv(csv);
    bool seen_ok = false;
    for (std::size_t i = 1; i < parsed.size(); ++i) {
      const bool deviation = parsed[i][6] == "DEVIATION";
      if (!deviation) seen_ok = true;
      CHECK_FALSE((deviation && seen_ok));
    }
    for (const auto& c : checks) {
      if (c.id == "Quote1" || c.id == "Quote2") CHECK(c.within);
    }
    profiles.erase("Quote3");
    CHECK_THROWS_AS(qc::conformance_checks(profiles, rows), qc::NotFoundError);
  }

  TEST_CASE("reference table requires its columns") {
    CHECK_THROWS_AS(qc::parse_reference_table("id,length\nQ,1\n"), qc::SchemaError);
  }
}
