#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace qc {

// Familiar-word list used to decide which words count as difficult.
class EasyWords {
 public:
  EasyWords() = default;
  explicit EasyWords(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  // The bundled Dale-Chall familiar-word list (~2950 entries).
  static const EasyWords& bundled();
  // One word per line; blank lines ignored; entries lowercased.
  static EasyWords from_file(const std::filesystem::path& path);

  bool contains(std::string_view word) const { return words_.count(std::string(word)) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

struct ReadabilityProfile {
  std::size_t char_length = 0;  // every code point, spaces and punctuation included
  std::size_t word_count = 0;
  std::size_t sentence_count = 0;
  std::size_t syllable_count = 0;
  std::size_t difficult_word_count = 0;
  std::size_t letter_count = 0;   // word characters inside words
  std::size_t nonspace_count = 0; // non-whitespace code points
  double flesch_reading_ease = 0.0;
  double coleman_liau = 0.0;
  double ari = 0.0;
  std::vector<std::string> difficult_words;  // sorted
};

// Vowel-group syllable estimate:
//   * one syllable per maximal run of a, e, i, o, u, y;
//   * silent "e" before -ly, -ment, -ful, -ness, -less;
//   * terminal silent "e", except consonant + "le" and "ee";
//   * silent "-ed" unless after t or d, silent "-es" unless after a sibilant;
//   * a lone leading vowel before a single consonant joins the next
//     syllable (no one-letter fragment at the word start);
//   * "n't" after a consonant adds a syllable (doesn't, didn't);
//   * minimum 1.
// Throws PreconditionError for an empty word.
std::size_t count_syllables(std::string_view word);

// Throws PreconditionError when the text is blank.
ReadabilityProfile profile(std::string_view text, const EasyWords& easy = EasyWords::bundled());

// Grade formulas over already-counted components.
double flesch_reading_ease(double words, double sentences, double syllables);
double coleman_liau_index(double letters, double words, double sentences);
double automated_readability_index(double characters, double words, double sentences);

// ---------------------------------------------------------------------------
// Conformance against a reference table of lexicon metrics.

struct ReferenceRow {
  std::string id;
  double length = 0.0;
  double flesch_reading_ease = 0.0;
  double coleman_liau = 0.0;
  double ari = 0.0;
  double difficult_words = 0.0;
  double syllables = 0.0;
  std::optional<double> difficulty_avg;
};

// CSV with columns id,length,flesch_reading_ease,coleman_liau,ari,
// difficult_words,syllables and optionally difficulty_avg.
std::vector<ReferenceRow> parse_reference_table(std::string_view csv);

struct ConformanceTolerances {
  std::set<std::string> exact_ids{"Quote1", "Quote2"};  // syllables and difficult words exact
  double syllable_relative = 0.05;
  double grade_absolute = 5.0;
};

struct ConformanceCheck {
  std::string id;
  std::string field;
  double expected = 0.0;
  double actual = 0.0;
  std::string tolerance;  // "exact", "±5%", "±5", "informational"
  bool within = true;
};

// One check per (row, field); fields without a gate are "informational".
std::vector<ConformanceCheck> conformance_checks(const std::map<std::string, ReadabilityProfile>& profiles,
                                                 const std::vector<ReferenceRow>& reference,
                                                 const ConformanceTolerances& tol = {});

// CSV report listing every check, deviations first.
std::string conformance_report_csv(const std::vector<ConformanceCheck>& checks);

}  // namespace qc
