#pragma once

// Small shared helpers: UTF-8 scanning, trimming, seeded shuffles, digests,
// and RFC 4180 CSV.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qc {

// ---------------------------------------------------------------------------
// Text

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

// Decodes UTF-8 into code points. Invalid bytes decode as U+FFFD, one per byte.
std::vector<char32_t> decode_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);

// Number of code points.
std::size_t utf8_length(std::string_view s);

// ASCII letters and digits, plus any non-ASCII code point outside the
// punctuation, symbol and space blocks. There are no Unicode property tables
// here, so this is a pragmatic approximation for Latin-script text.
bool is_word_char(char32_t cp);
bool is_space(char32_t cp);

// Splits on whitespace runs.
std::vector<std::string> split_whitespace(std::string_view s);

// ---------------------------------------------------------------------------
// Randomness
//
// Shuffles and draws are built on the raw std::mt19937_64 output sequence,
// which the standard pins down exactly, so seeded results are identical across
// standard libraries.

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

template <typename T>
void seeded_shuffle(std::span<T> items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// 64-bit FNV-1a; used to derive per-key seeds.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

using CsvRow = std::vector<std::string>;

std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);
std::string format_csv_row(std::span<const std::string> fields);

// Header-indexed view over parsed CSV.
class CsvTable {
 public:
  explicit CsvTable(std::string_view text);

  const CsvRow& header() const { return header_; }
  const std::vector<CsvRow>& rows() const { return rows_; }
  // Index of a column, or -1.
  int column(std::string_view name) const;
  int require_column(std::string_view name) const;

 private:
  CsvRow header_;
  std::vector<CsvRow> rows_;
};

// Shortest decimal text that reads back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace qc
