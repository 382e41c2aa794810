#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qc {

enum class Split { train, test, unassigned };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// One quote with its golden-standard code.
struct QuoteCodePair {
  std::string id;
  std::string quote;
  std::string code;
  std::string source;
  Split split = Split::unassigned;

  friend bool operator==(const QuoteCodePair&, const QuoteCodePair&) = default;
};

// Ordered, immutable collection of pairs with unique ids.
class Dataset {
 public:
  Dataset() = default;
  // Throws SchemaError on blank quote/code or duplicate ids.
  explicit Dataset(std::vector<QuoteCodePair> pairs);

  const std::vector<QuoteCodePair>& pairs() const { return pairs_; }
  const std::set<std::string>& sources() const { return sources_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  std::vector<QuoteCodePair> pairs_in(Split split) const;
  const QuoteCodePair* find(std::string_view id) const;

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.pairs_ == b.pairs_; }

 private:
  std::vector<QuoteCodePair> pairs_;
  std::set<std::string> sources_;
};

enum class DatasetFormat { jsonl, csv };

// Picks the format from the file extension (.csv, otherwise JSONL).
DatasetFormat format_for_path(const std::filesystem::path& path);

// Source assigned to records without one.
inline constexpr std::string_view kUnspecifiedSource = "unspecified";

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset parse_dataset(std::string_view text, DatasetFormat format);
std::string serialize_dataset(const Dataset& d, DatasetFormat format);
void save_dataset(const Dataset& d, const std::filesystem::path& path, DatasetFormat format);

// Concatenation. Ids present in both inputs are rewritten as "<label>/<id>"
// on both sides; all other ids are kept.
Dataset merge(const Dataset& a, const Dataset& b, std::string_view label_a = "a",
              std::string_view label_b = "b");

// Number of test pairs per source under largest-remainder allocation of
// round(total * test_fraction). Ties on the remainder go to the source that
// sorts first.
std::map<std::string, std::size_t> allocate_test_counts(
    const std::map<std::string, std::size_t>& source_sizes, double test_fraction);

// Stratified split by source. Deterministic for a fixed seed.
Dataset split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed);

enum class LengthUnit { characters, tokens };

struct SummaryStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_source;
  std::size_t unique_codes = 0;
  double quote_len_mean = 0.0;
  double quote_len_std = 0.0;
  double code_len_mean = 0.0;
  double code_len_std = 0.0;
};

struct DatasetStats {
  SummaryStats overall;
  // Only splits that occur in the dataset.
  std::map<Split, SummaryStats> per_split;
  LengthUnit unit = LengthUnit::characters;
};

// Lengths in code points (or whitespace tokens); population standard deviation.
DatasetStats compute_stats(const Dataset& d, LengthUnit unit = LengthUnit::characters);

std::size_t text_length(std::string_view text, LengthUnit unit);

nlohmann::json to_json(const DatasetStats& stats);

}  // namespace qc
