#include "qc/readability.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

// Defined in the generated easy_words_data.cpp.
extern const char* const kBundledEasyWords;

namespace {

std::unordered_set<std::string> parse_word_list(std::string_view text) {
  std::unordered_set<std::string> words;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto w = trim(text.substr(start, end - start));
    if (!w.empty()) words.insert(to_lower_ascii(w));
    start = end + 1;
  }
  return words;
}

bool is_vowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_terminator(char32_t cp) { return cp == U'.' || cp == U'!' || cp == U'?' || cp == 0x2026; }

bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == 0x2019 || cp == 0x2018; }

// Lowercased word with leading/trailing punctuation removed and only
// apostrophes kept inside; curly apostrophes folded to '.
std::string lookup_key(std::string_view token) {
  auto cps = decode_utf8(token);
  std::string out;
  for (char32_t cp : cps) {
    if (is_word_char(cp)) {
      if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
      append_utf8(out, cp);
    } else if (is_apostrophe(cp) && !out.empty()) {
      out.push_back('\'');
    }
  }
  while (!out.empty() && out.back() == '\'') out.pop_back();
  // Collapse any run of apostrophes left by doubled punctuation.
  std::string collapsed;
  for (char c : out) {
    if (c == '\'' && !collapsed.empty() && collapsed.back() == '\'') continue;
    collapsed.push_back(c);
  }
  return collapsed;
}

std::size_t stripped_length(std::string_view token) {
  std::size_t n = 0;
  for (char32_t cp : decode_utf8(token)) n += is_word_char(cp) ? 1 : 0;
  return n;
}

}  // namespace

const EasyWords& EasyWords::bundled() {
  static const EasyWords words(parse_word_list(kBundledEasyWords));
  return words;
}

EasyWords EasyWords::from_file(const std::filesystem::path& path) {
  return EasyWords(parse_word_list(read_file(path)));
}

std::size_t count_syllables(std::string_view word) {
  if (trim(word).empty()) throw PreconditionError("count_syllables: empty word");

  std::string lowered;  // ASCII letters only; apostrophes marked as '\''
  for (char32_t cp : decode_utf8(word)) {
    if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
    if (cp >= U'a' && cp <= U'z') {
      lowered.push_back(static_cast<char>(cp));
    } else if (is_apostrophe(cp)) {
      lowered.push_back('\'');
    }
  }
  // n't after a consonant is its own syllable: doesn't, didn't, wasn't.
  bool contraction = false;
  if (ends_with(lowered, "n't") && lowered.size() >= 4) {
    char before = lowered[lowered.size() - 4];
    contraction = before != '\'' && !is_vowel(before);
  }
  std::string w;
  for (char c : lowered) {
    if (c != '\'') w.push_back(c);
  }
  if (w.empty()) return 1;

  std::size_t n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (is_vowel(w[i]) && (i == 0 || !is_vowel(w[i - 1]))) ++n;
  }

  // Silent e in front of a consonant-initial suffix: definitely, statement.
  if (n > 1) {
    for (std::string_view suffix : {"ly", "ment", "ful", "ness", "less"}) {
      if (ends_with(w, suffix) && w.size() >= suffix.size() + 2) {
        std::size_t e = w.size() - suffix.size() - 1;
        if (w[e] == 'e' && !is_vowel(w[e - 1])) {
          --n;
          break;
        }
      }
    }
  }
  if (n > 1 && ends_with(w, "le") && w.size() > 2 && !is_vowel(w[w.size() - 3])) {
    // consonant + "le" keeps its syllable: table, little
  } else if (n > 1 && ends_with(w, "e") && !ends_with(w, "ee")) {
    --n;
  }
  if (n > 1 && ends_with(w, "ed") && w.size() > 2) {
    char c = w[w.size() - 3];
    if (!is_vowel(c) && c != 't' && c != 'd') --n;
  }
  if (n > 1 && ends_with(w, "es") && w.size() > 2 && !ends_with(w, "ches") && !ends_with(w, "shes")) {
    char c = w[w.size() - 3];
    if (!is_vowel(c) && std::string_view("szxgc").find(c) == std::string_view::npos) --n;
  }
  if (n > 1 && w.size() >= 3 && is_vowel(w[0]) && w[0] != 'y' && !is_vowel(w[1]) && w[1] != 'x' &&
      is_vowel(w[2])) {
    --n;
  }
  if (contraction) ++n;
  return std::max<std::size_t>(1, n);
}

double flesch_reading_ease(double words, double sentences, double syllables) {
  return 206.835 - 1.015 * (words / sentences) - 84.6 * (syllables / words);
}

double coleman_liau_index(double letters, double words, double sentences) {
  const double l = letters / words * 100.0;
  const double s = sentences / words * 100.0;
  return 0.0588 * l - 0.296 * s - 15.8;
}

double automated_readability_index(double characters, double words, double sentences) {
  return 4.71 * (characters / words) + 0.5 * (words / sentences) - 21.43;
}

ReadabilityProfile profile(std::string_view text, const EasyWords& easy) {
  if (trim(text).empty()) throw PreconditionError("readability profile of empty text");
  ReadabilityProfile p;
  const auto cps = decode_utf8(text);
  p.char_length = cps.size();
  for (char32_t cp : cps) p.nonspace_count += is_space(cp) ? 0 : 1;

  // Sentences: segments between runs of terminal punctuation that contain a word character.
  bool segment_has_word = false;
  for (char32_t cp : cps) {
    if (is_terminator(cp)) {
      if (segment_has_word) ++p.sentence_count;
      segment_has_word = false;
    } else if (is_word_char(cp)) {
      segment_has_word = true;
    }
  }
  if (segment_has_word) ++p.sentence_count;
  p.sentence_count = std::max<std::size_t>(1, p.sentence_count);

  std::set<std::string> difficult;
  for (const auto& token : split_whitespace(text)) {
    const std::size_t letters = stripped_length(token);
    if (letters == 0) continue;
    ++p.word_count;
    p.letter_count += letters;
    const std::size_t syllables = count_syllables(token);
    p.syllable_count += syllables;
    const std::string key = lookup_key(token);
    if (syllables >= 2 && !easy.contains(key)) difficult.insert(key);
  }
  if (p.word_count == 0) throw PreconditionError("readability profile: text has no words");
  p.difficult_words.assign(difficult.begin(), difficult.end());
  p.difficult_word_count = difficult.size();

  const auto w = static_cast<double>(p.word_count);
  const auto s = static_cast<double>(p.sentence_count);
  p.flesch_reading_ease = flesch_reading_ease(w, s, static_cast<double>(p.syllable_count));
  p.coleman_liau = coleman_liau_index(static_cast<double>(p.letter_count), w, s);
  p.ari = automated_readability_index(static_cast<double>(p.nonspace_count), w, s);
  return p;
}

std::vector<ReferenceRow> parse_reference_table(std::string_view csv) {
  CsvTable table(csv);
  const int id = table.require_column("id");
  const int length = table.require_column("length");
  const int fre = table.require_column("flesch_reading_ease");
  const int cli = table.require_column("coleman_liau");
  const int ari = table.require_column("ari");
  const int dw = table.require_column("difficult_words");
  const int syl = table.require_column("syllables");
  const int diff = table.column("difficulty_avg");
  std::vector<ReferenceRow> rows;
  for (const auto& r : table.rows()) {
    ReferenceRow row;
    row.id = std::string(trim(r[id]));
    row.length = parse_double(r[length]);
    row.flesch_reading_ease = parse_double(r[fre]);
    row.coleman_liau = parse_double(r[cli]);
    row.ari = parse_double(r[ari]);
    row.difficult_words = parse_double(r[dw]);
    row.syllables = parse_double(r[syl]);
    if (diff >= 0 && !trim(r[diff]).empty()) row.difficulty_avg = parse_double(r[diff]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ConformanceCheck> conformance_checks(
    const std::map<std::string, ReadabilityProfile>& profiles,
    const std::vector<ReferenceRow>& reference, const ConformanceTolerances& tol) {
  std::vector<ConformanceCheck> checks;
  for (const auto& row : reference) {
    auto it = profiles.find(row.id);
    if (it == profiles.end()) throw NotFoundError("no profile for reference row '" + row.id + "'");
    const auto& p = it->second;
    const bool exact = tol.exact_ids.count(row.id) > 0;

    auto add = [&](std::string field, double expected, double actual, std::string tolerance,
                   bool within) {
      checks.push_back({row.id, std::move(field), expected, actual, std::move(tolerance), within});
    };
    add("length", row.length, static_cast<double>(p.char_length), "exact",
        static_cast<double>(p.char_length) == row.length);

    const auto syl = static_cast<double>(p.syllable_count);
    if (exact) {
      add("syllables", row.syllables, syl, "exact", syl == row.syllables);
    } else {
      char label[32];
      std::snprintf(label, sizeof label, "±%g%%", tol.syllable_relative * 100.0);
      add("syllables", row.syllables, syl, label,
          std::abs(syl - row.syllables) <= tol.syllable_relative * row.syllables + 1e-12);
    }

    const auto dw = static_cast<double>(p.difficult_word_count);
    if (exact) {
      add("difficult_words", row.difficult_words, dw, "exact", dw == row.difficult_words);
    } else {
      add("difficult_words", row.difficult_words, dw, "informational", true);
    }

    char grade[32];
    std::snprintf(grade, sizeof grade, "±%g", tol.grade_absolute);
    auto grade_check = [&](const char* field, double expected, double actual) {
      add(field, expected, actual, grade, std::abs(actual - expected) <= tol.grade_absolute + 1e-12);
    };
    grade_check("flesch_reading_ease", row.flesch_reading_ease, p.flesch_reading_ease);
    grade_check("coleman_liau", row.coleman_liau, p.coleman_liau);
    grade_check("ari", row.ari, p.ari);
  }
  return checks;
}

std::string conformance_report_csv(const std::vector<ConformanceCheck>& checks) {
  std::vector<const ConformanceCheck*> ordered;
  for (const auto& c : checks) ordered.push_back(&c);
  std::stable_partition(ordered.begin(), ordered.end(),
                        [](const ConformanceCheck* c) { return !c->within; });
  std::string out = format_csv_row(std::vector<std::string>{
      "id", "field", "expected", "actual", "delta", "tolerance", "status"});
  for (const auto* c : ordered) {
    char expected[32], actual[32], delta[32];
    std::snprintf(expected, sizeof expected, "%.2f", c->expected);
    std::snprintf(actual, sizeof actual, "%.2f", c->actual);
    std::snprintf(delta, sizeof delta, "%+.2f", c->actual - c->expected);
    std::string status = c->within ? (c->actual == c->expected ? "match" : "within") : "DEVIATION";
    out += format_csv_row(
        std::vector<std::string>{c->id, c->field, expected, actual, delta, c->tolerance, status});
  }
  return out;
}

}  // namespace qc
