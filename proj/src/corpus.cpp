#include "qc/corpus.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>
#include <unordered_set>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

using json = nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::test:
      return "test";
    case Split::unassigned:
      break;
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  auto t = trim(text);
  if (t == "train") return Split::train;
  if (t == "test") return Split::test;
  if (t.empty() || t == "unassigned" || t == "null") return Split::unassigned;
  throw SchemaError("invalid split '" + std::string(t) + "'");
}

Dataset::Dataset(std::vector<QuoteCodePair> pairs) : pairs_(std::move(pairs)) {
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    const auto& p = pairs_[i];
    if (trim(p.quote).empty()) throw SchemaError("record " + std::to_string(i) + ": empty quote");
    if (trim(p.code).empty()) throw SchemaError("record " + std::to_string(i) + ": empty code");
    if (p.id.empty()) throw SchemaError("record " + std::to_string(i) + ": empty id");
    if (!ids.insert(p.id).second) {
      throw SchemaError("record " + std::to_string(i) + ": duplicate id '" + p.id + "'");
    }
    sources_.insert(p.source);
  }
}

std::vector<QuoteCodePair> Dataset::pairs_in(Split split) const {
  std::vector<QuoteCodePair> out;
  std::copy_if(pairs_.begin(), pairs_.end(), std::back_inserter(out),
               [split](const QuoteCodePair& p) { return p.split == split; });
  return out;
}

const QuoteCodePair* Dataset::find(std::string_view id) const {
  auto it = std::find_if(pairs_.begin(), pairs_.end(), [&](const auto& p) { return p.id == id; });
  return it == pairs_.end() ? nullptr : &*it;
}

DatasetFormat format_for_path(const std::filesystem::path& path) {
  return to_lower_ascii(path.extension().string()) == ".csv" ? DatasetFormat::csv
                                                             : DatasetFormat::jsonl;
}

namespace {

struct RawRecord {
  std::optional<std::string> id;
  std::optional<std::string> quote;
  std::optional<std::string> code;
  std::optional<std::string> source;
  std::optional<std::string> split;
};

std::optional<std::string> optional_string(const json& obj, const char* key, std::size_t index) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw SchemaError("record " + std::to_string(index) + ": field '" + key + "' must be a string");
  }
  return it->get<std::string>();
}

Dataset build(std::vector<RawRecord> records) {
  if (records.empty()) throw EmptyDatasetError("dataset has no records");
  std::unordered_set<std::string> given;
  for (const auto& r : records) {
    if (r.id && !r.id->empty()) given.insert(*r.id);
  }
  std::vector<QuoteCodePair> pairs;
  pairs.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    if (!r.quote || trim(*r.quote).empty()) {
      throw SchemaError("record " + std::to_string(i) + ": missing or empty field 'quote'");
    }
    if (!r.code || trim(*r.code).empty()) {
      throw SchemaError("record " + std::to_string(i) + ": missing or empty field 'code'");
    }
    QuoteCodePair p;
    if (r.id && !r.id->empty()) {
      p.id = *r.id;
    } else {
      // Generated ids never shadow ids present in the file.
      std::string candidate = "row-" + std::to_string(i + 1);
      while (given.count(candidate)) candidate += "_";
      given.insert(candidate);
      p.id = candidate;
    }
    p.quote = std::move(*r.quote);
    p.code = std::move(*r.code);
    p.source = r.source && !trim(*r.source).empty() ? std::string(trim(*r.source))
                                                    : std::string(kUnspecifiedSource);
    try {
      p.split = r.split ? parse_split(*r.split) : Split::unassigned;
    } catch (const SchemaError& e) {
      throw SchemaError("record " + std::to_string(i) + ": " + e.what());
    }
    pairs.push_back(std::move(p));
  }
  return Dataset(std::move(pairs));
}

std::vector<RawRecord> parse_jsonl(std::string_view text) {
  std::vector<RawRecord> records;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    std::size_t index = records.size();
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError("record " + std::to_string(index) + " (line " + std::to_string(line_no) +
                        "): invalid JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw SchemaError("record " + std::to_string(index) + ": expected a JSON object");
    }
    RawRecord r;
    r.id = optional_string(obj, "id", index);
    r.quote = optional_string(obj, "quote", index);
    r.code = optional_string(obj, "code", index);
    r.source = optional_string(obj, "source", index);
    r.split = optional_string(obj, "split", index);
    records.push_back(std::move(r));
    if (end == text.size()) break;
  }
  return records;
}

std::vector<RawRecord> parse_csv_records(std::string_view text) {
  if (trim(text).empty()) return {};
  CsvTable table(text);
  const int quote = table.column("quote");
  const int code = table.column("code");
  if (quote < 0 || code < 0) {
    throw SchemaError("CSV header must name the columns 'quote' and 'code'");
  }
  const int id = table.column("id");
  const int source = table.column("source");
  const int split = table.column("split");
  std::vector<RawRecord> records;
  for (const auto& row : table.rows()) {
    RawRecord r;
    r.quote = row[quote];
    r.code = row[code];
    if (id >= 0) r.id = row[id];
    if (source >= 0) r.source = row[source];
    if (split >= 0) r.split = row[split];
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

Dataset parse_dataset(std::string_view text, DatasetFormat format) {
  return build(format == DatasetFormat::csv ? parse_csv_records(text) : parse_jsonl(text));
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  try {
    return parse_dataset(read_file(path), format);
  } catch (const EmptyDatasetError&) {
    throw EmptyDatasetError(path.string() + ": dataset has no records");
  }
}

std::string serialize_dataset(const Dataset& d, DatasetFormat format) {
  std::string out;
  if (format == DatasetFormat::jsonl) {
    for (const auto& p : d.pairs()) {
      json obj = {{"id", p.id}, {"quote", p.quote}, {"code", p.code}, {"source", p.source}};
      obj["split"] = p.split == Split::unassigned ? json(nullptr) : json(to_string(p.split));
      out += obj.dump();
      out += '\n';
    }
    return out;
  }
  const std::vector<std::string> header{"id", "quote", "code", "source", "split"};
  out += format_csv_row(header);
  for (const auto& p : d.pairs()) {
    std::vector<std::string> row{p.id, p.quote, p.code, p.source,
                                 p.split == Split::unassigned ? "" : std::string(to_string(p.split))};
    out += format_csv_row(row);
  }
  return out;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path, DatasetFormat format) {
  write_file_atomic(path, serialize_dataset(d, format));
}

Dataset merge(const Dataset& a, const Dataset& b, std::string_view label_a,
              std::string_view label_b) {
  std::unordered_set<std::string> ids_a;
  for (const auto& p : a.pairs()) ids_a.insert(p.id);
  std::unordered_set<std::string> colliding;
  for (const auto& p : b.pairs()) {
    if (ids_a.count(p.id)) colliding.insert(p.id);
  }
  std::vector<QuoteCodePair> out;
  out.reserve(a.size() + b.size());
  auto append = [&](const Dataset& d, std::string_view label) {
    for (auto p : d.pairs()) {
      if (colliding.count(p.id)) p.id = std::string(label) + "/" + p.id;
      out.push_back(std::move(p));
    }
  };
  append(a, label_a);
  append(b, label_b);
  return Dataset(std::move(out));
}

std::map<std::string, std::size_t> allocate_test_counts(
    const std::map<std::string, std::size_t>& source_sizes, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw PreconditionError("test fraction must lie strictly between 0 and 1");
  }
  std::size_t total = 0;
  for (const auto& [_, n] : source_sizes) total += n;
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total) * test_fraction));

  struct Share {
    std::string source;
    std::size_t floor;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& [source, n] : source_sizes) {
    // Quotas within 1e-9 of an integer count as exact.
    const double quota = static_cast<double>(n) * test_fraction;
    const auto fl = static_cast<std::size_t>(std::floor(quota + 1e-9));
    double rem = quota - static_cast<double>(fl);
    if (rem < 1e-9) rem = 0.0;
    shares.push_back({source, fl, rem});
    assigned += fl;
  }
  // std::map iteration is already sorted by source, so a stable sort keeps
  // ties in name order.
  std::stable_sort(shares.begin(), shares.end(),
                   [](const Share& x, const Share& y) { return x.remainder > y.remainder; });
  std::size_t leftover = target > assigned ? target - assigned : 0;
  std::map<std::string, std::size_t> counts;
  for (auto& s : shares) {
    std::size_t extra = 0;
    if (leftover > 0 && s.remainder > 0.0) {
      extra = 1;
      --leftover;
    }
    counts[s.source] = s.floor + extra;
  }
  return counts;
}

Dataset split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (d.empty()) throw EmptyDatasetError("cannot split an empty dataset");
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < d.size(); ++i) by_source[d.pairs()[i].source].push_back(i);

  std::map<std::string, std::size_t> sizes;
  for (const auto& [source, idx] : by_source) sizes[source] = idx.size();
  const auto counts = allocate_test_counts(sizes, test_fraction);

  std::vector<QuoteCodePair> pairs = d.pairs();
  for (auto& p : pairs) p.split = Split::train;
  std::mt19937_64 rng(seed);
  for (auto& [source, idx] : by_source) {
    seeded_shuffle(std::span<std::size_t>(idx), rng);
    for (std::size_t k = 0; k < counts.at(source); ++k) pairs[idx[k]].split = Split::test;
  }
  return Dataset(std::move(pairs));
}

std::size_t text_length(std::string_view text, LengthUnit unit) {
  return unit == LengthUnit::characters ? utf8_length(text) : split_whitespace(text).size();
}

namespace {

// Mean and population std from exact integer moments: the sums do not depend
// on summation order, so the result is reproducible bit for bit.
std::pair<double, double> moments(const Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1>& v) {
  const auto n = static_cast<std::uint64_t>(v.size());
  const std::uint64_t sum = v.sum();
  const std::uint64_t sum_sq = v.squaredNorm();
  const double mean = static_cast<double>(sum) / static_cast<double>(n);
  const std::uint64_t numerator = n * sum_sq - sum * sum;  // n^2 * variance
  return {mean, std::sqrt(static_cast<double>(numerator) / static_cast<double>(n * n))};
}

SummaryStats summarize(std::span<const QuoteCodePair* const> pairs, LengthUnit unit) {
  SummaryStats s;
  s.total = pairs.size();
  std::set<std::string> codes;
  Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1> quote_len(static_cast<Eigen::Index>(pairs.size()));
  Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1> code_len(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = *pairs[i];
    ++s.per_source[p.source];
    codes.insert(p.code);
    quote_len(static_cast<Eigen::Index>(i)) = text_length(p.quote, unit);
    code_len(static_cast<Eigen::Index>(i)) = text_length(p.code, unit);
  }
  s.unique_codes = codes.size();
  std::tie(s.quote_len_mean, s.quote_len_std) = moments(quote_len);
  std::tie(s.code_len_mean, s.code_len_std) = moments(code_len);
  return s;
}

}  // namespace

DatasetStats compute_stats(const Dataset& d, LengthUnit unit) {
  if (d.empty()) throw EmptyDatasetError("cannot compute statistics of an empty dataset");
  DatasetStats stats;
  stats.unit = unit;
  std::vector<const QuoteCodePair*> all;
  std::map<Split, std::vector<const QuoteCodePair*>> by_split;
  for (const auto& p : d.pairs()) {
    all.push_back(&p);
    by_split[p.split].push_back(&p);
  }
  stats.overall = summarize(all, unit);
  for (const auto& [split, members] : by_split) stats.per_split[split] = summarize(members, unit);
  return stats;
}

}  // namespace qc

namespace qc {

namespace {

json summary_json(const SummaryStats& s) {
  return {{"total", s.total},
          {"per_source", s.per_source},
          {"unique_codes", s.unique_codes},
          {"quote_len_mean", s.quote_len_mean},
          {"quote_len_std", s.quote_len_std},
          {"code_len_mean", s.code_len_mean},
          {"code_len_std", s.code_len_std}};
}

}  // namespace

json to_json(const DatasetStats& stats) {
  json out = summary_json(stats.overall);
  out["num_sources"] = stats.overall.per_source.size();
  out["length_unit"] = stats.unit == LengthUnit::characters ? "characters" : "tokens";
  json splits = json::object();
  for (const auto& [split, s] : stats.per_split) splits[std::string(to_string(split))] = summary_json(s);
  out["per_split"] = std::move(splits);
  return out;
}

}  // namespace qc
