#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qc/error.hpp"

namespace qc {

// ---------------------------------------------------------------------------
// Difficulty

enum class DifficultyBucket { easy, medium, difficult };

inline constexpr DifficultyBucket kAllBuckets[] = {DifficultyBucket::easy, DifficultyBucket::medium,
                                                   DifficultyBucket::difficult};

std::string_view to_string(DifficultyBucket b);
DifficultyBucket parse_bucket(std::string_view text);

// easy: mean <= 1.5; medium: 1.5 < mean < 2.5; difficult: mean >= 2.5.
DifficultyBucket bucket_for(double mean_level);

struct DifficultyRating {
  std::string rater;
  std::string sentence;
  int level = 1;  // 1..3
};

struct DifficultySummary {
  std::string sentence;
  double mean_level = 0.0;
  std::size_t ratings = 0;
  DifficultyBucket bucket = DifficultyBucket::easy;
};

// One summary per sentence, in order of first appearance. Throws
// ValidationError on a level outside 1..3.
std::vector<DifficultySummary> summarize_difficulty(std::span<const DifficultyRating> ratings);
// Same, but every id in `sentences` must have at least one rating
// (InsufficientDataError otherwise); output follows `sentences`.
std::vector<DifficultySummary> summarize_difficulty(std::span<const DifficultyRating> ratings,
                                                    std::span<const std::string> sentences);

// ---------------------------------------------------------------------------
// Deviation from the golden standard

inline constexpr std::string_view kGoldenSource = "GS";

struct LabelRating {
  std::string expert;
  std::string sentence;
  std::string source;  // coder id, model name, or the golden-standard id
  int value = 1;       // 1..5
};

struct DgsOptions {
  std::string golden{kGoldenSource};
  // Drop ratings an expert gave to their own label (expert id == source id).
  bool exclude_self_ratings = false;
};

// Mean rating of `source` minus mean rating of the golden standard for
// `sentence`, both over the experts who rated both. Throws UndefinedDgsError
// when no expert qualifies.
double dgs(std::span<const LabelRating> ratings, std::string_view source, std::string_view sentence,
           const DgsOptions& options = {});

// Mean of the defined per-sentence values; InsufficientDataError when empty.
double average_dgs(std::span<const double> per_sentence);

struct DgsCell {
  std::string source;
  std::string sentence;
  std::optional<double> value;  // empty when undefined
  std::size_t experts = 0;      // qualifying experts
  std::optional<DifficultyBucket> bucket;
};

struct SourceDgs {
  std::optional<double> average;
  std::size_t defined = 0;
  std::vector<std::string> undefined_sentences;
  std::map<DifficultyBucket, std::pair<std::optional<double>, std::size_t>> by_bucket;
};

struct DgsTable {
  std::vector<DgsCell> cells;  // sources sorted, sentences in first-seen order
  std::map<std::string, SourceDgs> sources;
};

// Every (source, sentence) that has at least one rating, the golden standard
// included. `buckets` may be empty; otherwise every sentence must be bucketed.
DgsTable dgs_table(std::span<const LabelRating> ratings, std::span<const DifficultySummary> buckets,
                   const DgsOptions& options = {});

// ---------------------------------------------------------------------------
// Krippendorff's alpha

enum class AlphaScale { nominal, ordinal, interval };

std::string_view to_string(AlphaScale s);
AlphaScale parse_scale(std::string_view text);

template <typename Scalar>
struct BasicAlphaResult {
  Scalar alpha = Scalar(0);
  AlphaScale scale = AlphaScale::nominal;
  std::size_t n_pairable = 0;  // values in units with >= 2 ratings
  std::size_t units = 0;       // units with >= 2 ratings
  Scalar observed_disagreement = Scalar(0);
  Scalar expected_disagreement = Scalar(0);
};

using AlphaResult = BasicAlphaResult<double>;

// Rows are units (items), columns are observers, NaN marks a missing value.
template <typename Derived>
BasicAlphaResult<typename Derived::Scalar> krippendorff_alpha(const Eigen::MatrixBase<Derived>& data,
                                                              AlphaScale scale) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // Pairable units and the value domain they use.
  std::vector<std::vector<Scalar>> units;
  std::vector<Scalar> domain;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    std::vector<Scalar> values;
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      const Scalar v = data(r, c);
      if (!std::isnan(v)) values.push_back(v);
    }
    if (values.size() < 2) continue;
    domain.insert(domain.end(), values.begin(), values.end());
    units.push_back(std::move(values));
  }
  if (units.empty()) {
    throw InsufficientDataError("krippendorff_alpha: no unit has two or more ratings");
  }
  std::sort(domain.begin(), domain.end());
  domain.erase(std::unique(domain.begin(), domain.end()), domain.end());
  const auto V = static_cast<Eigen::Index>(domain.size());
  auto index_of = [&](Scalar v) {
    return static_cast<Eigen::Index>(std::lower_bound(domain.begin(), domain.end(), v) - domain.begin());
  };

  // Coincidence matrix: each ordered pair within a unit of m values adds 1/(m-1).
  Matrix o = Matrix::Zero(V, V);
  std::size_t pairable = 0;
  for (const auto& values : units) {
    const Scalar w = Scalar(1) / static_cast<Scalar>(values.size() - 1);
    pairable += values.size();
    for (std::size_t a = 0; a < values.size(); ++a) {
      for (std::size_t b = 0; b < values.size(); ++b) {
        if (a != b) o(index_of(values[a]), index_of(values[b])) += w;
      }
    }
  }
  const Vector marginals = o.rowwise().sum();
  const auto n = static_cast<Scalar>(pairable);

  // Squared-difference metric over the domain.
  Matrix delta = Matrix::Zero(V, V);
  for (Eigen::Index c = 0; c < V; ++c) {
    for (Eigen::Index k = 0; k < V; ++k) {
      switch (scale) {
        case AlphaScale::nominal:
          delta(c, k) = c == k ? Scalar(0) : Scalar(1);
          break;
        case AlphaScale::interval: {
          const Scalar d = domain[static_cast<std::size_t>(c)] - domain[static_cast<std::size_t>(k)];
          delta(c, k) = d * d;
          break;
        }
        case AlphaScale::ordinal: {
          const Eigen::Index lo = std::min(c, k), hi = std::max(c, k);
          const Scalar d = marginals.segment(lo, hi - lo + 1).sum() -
                           (marginals(c) + marginals(k)) / Scalar(2);
          delta(c, k) = d * d;
          break;
        }
      }
    }
  }

  BasicAlphaResult<Scalar> out;
  out.scale = scale;
  out.n_pairable = pairable;
  out.units = units.size();
  out.observed_disagreement = o.cwiseProduct(delta).sum() / n;
  out.expected_disagreement = (marginals * marginals.transpose()).cwiseProduct(delta).sum() / (n * (n - Scalar(1)));
  if (!(out.expected_disagreement > Scalar(0))) {
    throw DegenerateAlphaError(
        "krippendorff_alpha: expected disagreement is zero (every pairable value is identical), "
        "so alpha is undefined");
  }
  out.alpha = Scalar(1) - out.observed_disagreement / out.expected_disagreement;
  return out;
}

// Integer codes for nominal labels: equal strings share a code, in order of
// first appearance. Missing cells stay NaN.
Eigen::MatrixXd encode_nominal(const std::vector<std::vector<std::optional<std::string>>>& labels);

// ---------------------------------------------------------------------------
// Correlation

enum class CorrelationMethod { pearson, spearman };

std::string_view to_string(CorrelationMethod m);
CorrelationMethod parse_correlation(std::string_view text);

// Mid-ranks (ties share the average rank), starting at 1.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> average_ranks(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> ranks(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && v(order[static_cast<std::size_t>(j + 1)]) == v(order[static_cast<std::size_t>(i)])) ++j;
    const Scalar rank = Scalar(i + j) / Scalar(2) + Scalar(1);
    for (Eigen::Index t = i; t <= j; ++t) ranks(order[static_cast<std::size_t>(t)]) = rank;
    i = j + 1;
  }
  return ranks;
}

template <typename DX, typename DY>
typename DX::Scalar correlate(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                              CorrelationMethod method = CorrelationMethod::pearson) {
  using Scalar = typename DX::Scalar;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (x.size() != y.size()) throw PreconditionError("correlate: x and y differ in length");
  if (x.size() < 3) throw InsufficientDataError("correlate: need at least 3 paired values");
  Vector a = method == CorrelationMethod::spearman ? average_ranks(x) : Vector(x.reshaped());
  Vector b = method == CorrelationMethod::spearman ? average_ranks(y) : Vector(y.reshaped());
  a.array() -= a.mean();
  b.array() -= b.mean();
  const Scalar sa = a.squaredNorm(), sb = b.squaredNorm();
  if (!(sa > Scalar(0)) || !(sb > Scalar(0))) throw ZeroVarianceError("correlate: zero variance");
  const Scalar r = a.dot(b) / std::sqrt(sa * sb);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

double correlate(std::span<const double> x, std::span<const double> y,
                 CorrelationMethod method = CorrelationMethod::pearson);

// ---------------------------------------------------------------------------
// Ratings grouped by difficulty

struct BucketMean {
  std::string source;
  DifficultyBucket bucket = DifficultyBucket::easy;
  std::optional<double> mean;  // empty when count is 0
  std::size_t count = 0;
};

// One row per (source, bucket), all three buckets for every source. Throws
// PreconditionError when a rated sentence has no bucket.
std::vector<BucketMean> ratings_by_bucket(std::span<const LabelRating> ratings,
                                          std::span<const DifficultySummary> buckets);

// ---------------------------------------------------------------------------
// File formats

// Items x observers; first column holds item ids, blank cells are missing.
struct RatingMatrix {
  std::vector<std::string> items;
  std::vector<std::string> observers;
  Eigen::MatrixXd values;  // NaN = missing
};

// Numeric cells by default; with `nominal`, cells are labels and are encoded.
RatingMatrix parse_rating_matrix(std::string_view csv, bool nominal = false);
std::string format_rating_matrix(const RatingMatrix& m);

// Units are (sentence, source) label pairs, observers are experts.
RatingMatrix label_rating_matrix(std::span<const LabelRating> ratings);

// Header expert,sentence,source,value.
std::vector<LabelRating> parse_label_ratings(std::string_view csv);
std::string format_label_ratings(std::span<const LabelRating> ratings);

// Header rater,sentence,level.
std::vector<DifficultyRating> parse_difficulty_ratings(std::string_view csv);
std::string format_difficulty_ratings(std::span<const DifficultyRating> ratings);

// Header sentence,mean_level,ratings,bucket.
std::string format_difficulty_summaries(std::span<const DifficultySummary> summaries);
std::vector<DifficultySummary> parse_difficulty_summaries(std::string_view csv);

// source,sentence,bucket,dgs,experts (dgs blank when undefined).
std::string format_dgs_cells(const DgsTable& t);
// source,average_dgs,defined,undefined,easy,medium,difficult
std::string format_dgs_summary(const DgsTable& t);

}  // namespace qc
