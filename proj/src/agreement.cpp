#include "qc/agreement.hpp"

#include <set>

#include "qc/util.hpp"

namespace qc {

std::string_view to_string(DifficultyBucket b) {
  switch (b) {
    case DifficultyBucket::easy:
      return "easy";
    case DifficultyBucket::medium:
      return "medium";
    case DifficultyBucket::difficult:
      return "difficult";
  }
  return "?";
}

DifficultyBucket parse_bucket(std::string_view text) {
  const auto t = to_lower_ascii(trim(text));
  if (t == "easy") return DifficultyBucket::easy;
  if (t == "medium") return DifficultyBucket::medium;
  if (t == "difficult") return DifficultyBucket::difficult;
  throw ValidationError("unknown difficulty bucket '" + std::string(text) + "'");
}

DifficultyBucket bucket_for(double mean_level) {
  if (std::isnan(mean_level)) throw PreconditionError("bucket_for: mean is NaN");
  if (mean_level <= 1.5) return DifficultyBucket::easy;
  if (mean_level < 2.5) return DifficultyBucket::medium;
  return DifficultyBucket::difficult;
}

std::vector<DifficultySummary> summarize_difficulty(std::span<const DifficultyRating> ratings) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<long long, std::size_t>> acc;
  for (const auto& r : ratings) {
    if (r.level < 1 || r.level > 3) {
      throw ValidationError("difficulty level " + std::to_string(r.level) + " by '" + r.rater +
                            "' for '" + r.sentence + "' is outside 1..3");
    }
    auto [it, inserted] = acc.try_emplace(r.sentence, 0LL, 0);
    if (inserted) order.push_back(r.sentence);
    it->second.first += r.level;
    it->second.second += 1;
  }
  std::vector<DifficultySummary> out;
  for (const auto& id : order) {
    const auto& [sum, count] = acc.at(id);
    const double mean = static_cast<double>(sum) / static_cast<double>(count);
    out.push_back({id, mean, count, bucket_for(mean)});
  }
  return out;
}

std::vector<DifficultySummary> summarize_difficulty(std::span<const DifficultyRating> ratings,
                                                    std::span<const std::string> sentences) {
  auto all = summarize_difficulty(ratings);
  std::map<std::string, DifficultySummary> by_id;
  for (auto& s : all) by_id.emplace(s.sentence, s);
  std::vector<DifficultySummary> out;
  for (const auto& id : sentences) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InsufficientDataError("sentence '" + id + "' has no difficulty ratings");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_value(const LabelRating& r) {
  if (r.value < 1 || r.value > 5) {
    throw ValidationError("rating " + std::to_string(r.value) + " by '" + r.expert + "' is outside 1..5");
  }
}

// expert -> value for one (source, sentence), honouring self-exclusion.
std::map<std::string, int> ratings_for(std::span<const LabelRating> ratings, std::string_view source,
                                       std::string_view sentence, const DgsOptions& options) {
  std::map<std::string, int> out;
  for (const auto& r : ratings) {
    if (r.source != source || r.sentence != sentence) continue;
    check_value(r);
    if (options.exclude_self_ratings && r.expert == r.source) continue;
    if (!out.emplace(r.expert, r.value).second) {
      throw ValidationError("expert '" + r.expert + "' rated source '" + r.source + "' on '" +
                            r.sentence + "' more than once");
    }
  }
  return out;
}

struct DgsValue {
  std::optional<double> value;
  std::size_t experts = 0;
};

DgsValue dgs_value(std::span<const LabelRating> ratings, std::string_view source,
                   std::string_view sentence, const DgsOptions& options) {
  const auto src = ratings_for(ratings, source, sentence, options);
  const auto gs = ratings_for(ratings, options.golden, sentence, options);
  long long sum_src = 0, sum_gs = 0;
  std::size_t n = 0;
  for (const auto& [expert, value] : src) {
    auto it = gs.find(expert);
    if (it == gs.end()) continue;
    sum_src += value;
    sum_gs += it->second;
    ++n;
  }
  if (n == 0) return {};
  const double dn = static_cast<double>(n);
  return {static_cast<double>(sum_src) / dn - static_cast<double>(sum_gs) / dn, n};
}

}  // namespace

double dgs(std::span<const LabelRating> ratings, std::string_view source, std::string_view sentence,
           const DgsOptions& options) {
  auto v = dgs_value(ratings, source, sentence, options);
  if (!v.value) {
    throw UndefinedDgsError("no expert rated both '" + std::string(source) + "' and '" + options.golden +
                            "' for sentence '" + std::string(sentence) + "'");
  }
  return *v.value;
}

double average_dgs(std::span<const double> per_sentence) {
  if (per_sentence.empty()) throw InsufficientDataError("average_dgs: no defined sentence values");
  double sum = 0.0;
  for (double v : per_sentence) sum += v;
  return sum / static_cast<double>(per_sentence.size());
}

DgsTable dgs_table(std::span<const LabelRating> ratings, std::span<const DifficultySummary> buckets,
                   const DgsOptions& options) {
  std::vector<std::string> sentences;
  std::set<std::string> seen_sentences, sources;
  for (const auto& r : ratings) {
    check_value(r);
    if (seen_sentences.insert(r.sentence).second) sentences.push_back(r.sentence);
    sources.insert(r.source);
  }
  std::map<std::string, DifficultyBucket> bucket_of;
  for (const auto& b : buckets) bucket_of[b.sentence] = b.bucket;
  if (!buckets.empty()) {
    for (const auto& s : sentences) {
      if (!bucket_of.count(s)) throw PreconditionError("sentence '" + s + "' has no difficulty bucket");
    }
  }

  DgsTable table;
  for (const auto& source : sources) {
    SourceDgs summary;
    std::vector<double> defined;
    std::map<DifficultyBucket, std::vector<double>> per_bucket;
    for (const auto& sentence : sentences) {
      bool rated = false;
      for (const auto& r : ratings) {
        if (r.source == source && r.sentence == sentence) {
          rated = true;
          break;
        }
      }
      if (!rated) continue;
      DgsCell cell{source, sentence, std::nullopt, 0, std::nullopt};
      if (auto it = bucket_of.find(sentence); it != bucket_of.end()) cell.bucket = it->second;
      auto v = dgs_value(ratings, source, sentence, options);
      cell.value = v.value;
      cell.experts = v.experts;
      if (cell.value) {
        defined.push_back(*cell.value);
        if (cell.bucket) per_bucket[*cell.bucket].push_back(*cell.value);
      } else {
        summary.undefined_sentences.push_back(sentence);
      }
      table.cells.push_back(std::move(cell));
    }
    summary.defined = defined.size();
    if (!defined.empty()) summary.average = average_dgs(defined);
    if (!buckets.empty()) {
      for (auto b : kAllBuckets) {
        auto it = per_bucket.find(b);
        if (it == per_bucket.end()) {
          summary.by_bucket[b] = {std::nullopt, 0};
        } else {
          summary.by_bucket[b] = {average_dgs(it->second), it->second.size()};
        }
      }
    }
    table.sources.emplace(source, std::move(summary));
  }
  return table;
}

// ---------------------------------------------------------------------------

std::string_view to_string(AlphaScale s) {
  switch (s) {
    case AlphaScale::nominal:
      return "nominal";
    case AlphaScale::ordinal:
      return "ordinal";
    case AlphaScale::interval:
      return "interval";
  }
  return "?";
}

AlphaScale parse_scale(std::string_view text) {
  const auto t = to_lower_ascii(trim(text));
  if (t == "nominal") return AlphaScale::nominal;
  if (t == "ordinal") return AlphaScale::ordinal;
  if (t == "interval") return AlphaScale::interval;
  throw ConfigError("unknown alpha scale '" + std::string(text) + "' (nominal, ordinal, interval)");
}

Eigen::MatrixXd encode_nominal(const std::vector<std::vector<std::optional<std::string>>>& labels) {
  std::size_t cols = 0;
  for (const auto& row : labels) cols = std::max(cols, row.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()),
                                                static_cast<Eigen::Index>(cols),
                                                std::numeric_limits<double>::quiet_NaN());
  std::map<std::string, double> codes;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (std::size_t c = 0; c < labels[r].size(); ++c) {
      if (!labels[r][c]) continue;
      auto [it, _] = codes.try_emplace(*labels[r][c], static_cast<double>(codes.size()));
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = it->second;
    }
  }
  return m;
}

std::string_view to_string(CorrelationMethod m) {
  return m == CorrelationMethod::pearson ? "pearson" : "spearman";
}

CorrelationMethod parse_correlation(std::string_view text) {
  const auto t = to_lower_ascii(trim(text));
  if (t == "pearson") return CorrelationMethod::pearson;
  if (t == "spearman") return CorrelationMethod::spearman;
  throw ConfigError("unknown correlation method '" + std::string(text) + "'");
}

double correlate(std::span<const double> x, std::span<const double> y, CorrelationMethod method) {
  using Map = Eigen::Map<const Eigen::VectorXd>;
  return correlate(Map(x.data(), static_cast<Eigen::Index>(x.size())),
                   Map(y.data(), static_cast<Eigen::Index>(y.size())), method);
}

std::vector<BucketMean> ratings_by_bucket(std::span<const LabelRating> ratings,
                                          std::span<const DifficultySummary> buckets) {
  std::map<std::string, DifficultyBucket> bucket_of;
  for (const auto& b : buckets) bucket_of[b.sentence] = b.bucket;
  std::map<std::string, std::map<DifficultyBucket, std::pair<long long, std::size_t>>> acc;
  for (const auto& r : ratings) {
    check_value(r);
    auto it = bucket_of.find(r.sentence);
    if (it == bucket_of.end()) throw PreconditionError("sentence '" + r.sentence + "' has no difficulty bucket");
    auto& cell = acc[r.source][it->second];
    cell.first += r.value;
    cell.second += 1;
  }
  std::vector<BucketMean> out;
  for (const auto& [source, per_bucket] : acc) {
    for (auto b : kAllBuckets) {
      BucketMean row{source, b, std::nullopt, 0};
      if (auto it = per_bucket.find(b); it != per_bucket.end()) {
        row.count = it->second.second;
        row.mean = static_cast<double>(it->second.first) / static_cast<double>(row.count);
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

int parse_int_field(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  const double v = parse_double(t);
  if (v != std::floor(v)) throw ValidationError(std::string(what) + " '" + std::string(t) + "' is not an integer");
  return static_cast<int>(v);
}

std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

RatingMatrix parse_rating_matrix(std::string_view csv, bool nominal) {
  auto rows = parse_csv(csv);
  if (rows.empty()) throw SchemaError("rating matrix: missing header row");
  RatingMatrix m;
  m.observers.assign(rows[0].begin() + (rows[0].empty() ? 0 : 1), rows[0].end());
  std::vector<std::vector<std::optional<std::string>>> labels;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() != rows[0].size()) {
      throw SchemaError("rating matrix row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                        " fields, header has " + std::to_string(rows[0].size()));
    }
    m.items.push_back(row[0]);
    std::vector<std::optional<std::string>> cells;
    for (std::size_t c = 1; c < row.size(); ++c) {
      auto t = trim(row[c]);
      cells.push_back(t.empty() ? std::nullopt : std::optional<std::string>(std::string(t)));
    }
    labels.push_back(std::move(cells));
  }
  if (nominal) {
    m.values = encode_nominal(labels);
    if (m.values.cols() < static_cast<Eigen::Index>(m.observers.size())) {
      m.values.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(m.observers.size()));
    }
    return m;
  }
  m.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()),
                                       static_cast<Eigen::Index>(m.observers.size()),
                                       std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (std::size_t c = 0; c < labels[r].size(); ++c) {
      if (labels[r][c]) {
        m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(*labels[r][c]);
      }
    }
  }
  return m;
}

std::string format_rating_matrix(const RatingMatrix& m) {
  std::vector<std::string> header{"item"};
  header.insert(header.end(), m.observers.begin(), m.observers.end());
  std::string out = format_csv_row(header);
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    std::vector<std::string> row{m.items[static_cast<std::size_t>(r)]};
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
      const double v = m.values(r, c);
      row.push_back(std::isnan(v) ? std::string() : format_double(v));
    }
    out += format_csv_row(row);
  }
  return out;
}

RatingMatrix label_rating_matrix(std::span<const LabelRating> ratings) {
  RatingMatrix m;
  std::map<std::pair<std::string, std::string>, std::size_t> unit_index;
  std::map<std::string, std::size_t> observer_index;
  for (const auto& r : ratings) {
    check_value(r);
    if (unit_index.try_emplace({r.sentence, r.source}, m.items.size()).second) {
      m.items.push_back(r.sentence + "|" + r.source);
    }
    if (observer_index.try_emplace(r.expert, m.observers.size()).second) m.observers.push_back(r.expert);
  }
  m.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(m.items.size()),
                                       static_cast<Eigen::Index>(m.observers.size()),
                                       std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : ratings) {
    const auto u = static_cast<Eigen::Index>(unit_index.at({r.sentence, r.source}));
    const auto o = static_cast<Eigen::Index>(observer_index.at(r.expert));
    if (!std::isnan(m.values(u, o))) {
      throw ValidationError("expert '" + r.expert + "' rated '" + r.source + "' on '" + r.sentence +
                            "' more than once");
    }
    m.values(u, o) = r.value;
  }
  return m;
}

std::vector<LabelRating> parse_label_ratings(std::string_view csv) {
  CsvTable t(csv);
  const int e = t.require_column("expert"), s = t.require_column("sentence"),
            src = t.require_column("source"), v = t.require_column("value");
  std::vector<LabelRating> out;
  for (const auto& row : t.rows()) {
    LabelRating r{std::string(trim(row[e])), std::string(trim(row[s])), std::string(trim(row[src])),
                  parse_int_field(row[v], "rating")};
    check_value(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_label_ratings(std::span<const LabelRating> ratings) {
  std::string out = format_csv_row(std::vector<std::string>{"expert", "sentence", "source", "value"});
  for (const auto& r : ratings) {
    out += format_csv_row(std::vector<std::string>{r.expert, r.sentence, r.source, std::to_string(r.value)});
  }
  return out;
}

std::vector<DifficultyRating> parse_difficulty_ratings(std::string_view csv) {
  CsvTable t(csv);
  const int r = t.require_column("rater"), s = t.require_column("sentence"), l = t.require_column("level");
  std::vector<DifficultyRating> out;
  for (const auto& row : t.rows()) {
    DifficultyRating d{std::string(trim(row[r])), std::string(trim(row[s])), parse_int_field(row[l], "level")};
    if (d.level < 1 || d.level > 3) throw ValidationError("difficulty level outside 1..3 for '" + d.sentence + "'");
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_difficulty_ratings(std::span<const DifficultyRating> ratings) {
  std::string out = format_csv_row(std::vector<std::string>{"rater", "sentence", "level"});
  for (const auto& r : ratings) {
    out += format_csv_row(std::vector<std::string>{r.rater, r.sentence, std::to_string(r.level)});
  }
  return out;
}

std::string format_difficulty_summaries(std::span<const DifficultySummary> summaries) {
  std::string out = format_csv_row(std::vector<std::string>{"sentence", "mean_level", "ratings", "bucket"});
  for (const auto& s : summaries) {
    out += format_csv_row(std::vector<std::string>{s.sentence, format_double(s.mean_level),
                                                   std::to_string(s.ratings), std::string(to_string(s.bucket))});
  }
  return out;
}

std::vector<DifficultySummary> parse_difficulty_summaries(std::string_view csv) {
  CsvTable t(csv);
  const int s = t.require_column("sentence"), m = t.require_column("mean_level");
  const int n = t.column("ratings"), b = t.column("bucket");
  std::vector<DifficultySummary> out;
  for (const auto& row : t.rows()) {
    DifficultySummary d;
    d.sentence = std::string(trim(row[s]));
    d.mean_level = parse_double(row[m]);
    d.ratings = n >= 0 ? static_cast<std::size_t>(parse_int_field(row[n], "ratings")) : 0;
    d.bucket = b >= 0 && !trim(row[b]).empty() ? parse_bucket(row[b]) : bucket_for(d.mean_level);
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_dgs_cells(const DgsTable& t) {
  std::string out = format_csv_row(std::vector<std::string>{"source", "sentence", "bucket", "dgs", "experts"});
  for (const auto& c : t.cells) {
    out += format_csv_row(std::vector<std::string>{
        c.source, c.sentence, c.bucket ? std::string(to_string(*c.bucket)) : std::string(),
        opt_double(c.value), std::to_string(c.experts)});
  }
  return out;
}

std::string format_dgs_summary(const DgsTable& t) {
  std::string out = format_csv_row(std::vector<std::string>{"source", "average_dgs", "defined", "undefined",
                                                            "easy", "medium", "difficult"});
  for (const auto& [source, s] : t.sources) {
    std::string undefined;
    for (const auto& id : s.undefined_sentences) undefined += (undefined.empty() ? "" : ";") + id;
    std::vector<std::string> row{source, opt_double(s.average), std::to_string(s.defined), undefined};
    for (auto b : kAllBuckets) {
      auto it = s.by_bucket.find(b);
      row.push_back(it == s.by_bucket.end() ? std::string() : opt_double(it->second.first));
    }
    out += format_csv_row(row);
  }
  return out;
}

}  // namespace qc
