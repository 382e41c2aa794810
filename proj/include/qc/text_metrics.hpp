#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qc/error.hpp"
#include "qc/stats.hpp"

namespace qc {

// ---------------------------------------------------------------------------
// Embeddings

// Token strings with one row vector per token.
template <typename Scalar>
struct BasicTokenEmbeddingSet {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::vector<std::string> tokens;
  Matrix vectors;

  BasicTokenEmbeddingSet() = default;
  BasicTokenEmbeddingSet(std::vector<std::string> toks, Matrix vecs)
      : tokens(std::move(toks)), vectors(std::move(vecs)) {
    validate();
  }

  Eigen::Index dimension() const { return vectors.cols(); }
  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  void validate() const {
    if (static_cast<Eigen::Index>(tokens.size()) != vectors.rows()) {
      throw ContractError("token embedding set has " + std::to_string(tokens.size()) +
                          " tokens but " + std::to_string(vectors.rows()) + " vectors");
    }
    if (!tokens.empty() && vectors.cols() < 1) {
      throw ContractError("token embedding vectors must have dimension >= 1");
    }
  }
};

using TokenEmbeddingSet = BasicTokenEmbeddingSet<double>;

// ---------------------------------------------------------------------------
// Scores

template <typename Scalar>
Scalar harmonic_f1(Scalar precision, Scalar recall) {
  const Scalar denom = precision + recall;
  return denom == Scalar(0) ? Scalar(0) : Scalar(2) * precision * recall / denom;
}

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const PrecisionRecallF1&, const PrecisionRecallF1&) = default;
};

struct RougeScores {
  PrecisionRecallF1 rouge1;
  PrecisionRecallF1 rouge2;
  PrecisionRecallF1 rougeL;

  friend bool operator==(const RougeScores&, const RougeScores&) = default;
};

template <typename Scalar>
struct BasicBertScore {
  Scalar precision = Scalar(0);
  Scalar recall = Scalar(0);
  Scalar f1 = Scalar(0);
};

using BertScoreTriple = BasicBertScore<double>;

// Lowercased maximal runs of word characters (see is_word_char).
std::vector<std::string> tokenize_for_rouge(std::string_view text);

// Clipped n-gram overlap count and the LCS length; exposed for testing.
std::size_t ngram_overlap(std::span<const std::string> candidate,
                          std::span<const std::string> reference, std::size_t n);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

RougeScores rouge(std::string_view candidate, std::string_view reference);
RougeScores rouge_tokens(std::span<const std::string> candidate,
                         std::span<const std::string> reference);

// Greedy max-cosine matching without IDF weighting or baseline rescaling.
// precision averages over candidate tokens, recall over reference tokens.
template <typename Scalar>
BasicBertScore<Scalar> bertscore(const BasicTokenEmbeddingSet<Scalar>& cand,
                                 const BasicTokenEmbeddingSet<Scalar>& ref) {
  if (cand.empty() || ref.empty()) throw PreconditionError("bertscore: empty token set");
  if (cand.dimension() != ref.dimension()) {
    throw ContractError("bertscore: embedding dimensions differ (" +
                        std::to_string(cand.dimension()) + " vs " +
                        std::to_string(ref.dimension()) + ")");
  }
  using Matrix = typename BasicTokenEmbeddingSet<Scalar>::Matrix;
  auto normalized = [](const Matrix& m, const char* side) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = m.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
      if (!(norms(i) > Scalar(0)) || !std::isfinite(static_cast<double>(norms(i)))) {
        throw DegenerateVectorError(std::string("bertscore: zero-norm or non-finite ") + side +
                                    " vector at token " + std::to_string(i));
      }
    }
    return Matrix(norms.cwiseInverse().asDiagonal() * m);
  };
  const Matrix c = normalized(cand.vectors, "candidate");
  const Matrix r = normalized(ref.vectors, "reference");
  const Matrix sim = c * r.transpose();  // |cand| x |ref| cosines

  BasicBertScore<Scalar> out;
  out.precision = sim.rowwise().maxCoeff().mean();
  out.recall = sim.colwise().maxCoeff().mean();
  out.f1 = harmonic_f1(out.precision, out.recall);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Metric {
  bert_p,
  bert_r,
  bert_f1,
  rouge1_p,
  rouge1_r,
  rouge1_f1,
  rouge2_p,
  rouge2_r,
  rouge2_f1,
  rougeL_p,
  rougeL_r,
  rougeL_f1,
};

inline constexpr std::size_t kMetricCount = 12;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics = {
    Metric::bert_p,    Metric::bert_r,    Metric::bert_f1,   Metric::rouge1_p,
    Metric::rouge1_r,  Metric::rouge1_f1, Metric::rouge2_p,  Metric::rouge2_r,
    Metric::rouge2_f1, Metric::rougeL_p,  Metric::rougeL_r,  Metric::rougeL_f1};

std::string_view metric_name(Metric m);
bool is_bert_metric(Metric m);

struct PairScores {
  std::optional<RougeScores> rouge;
  std::optional<BertScoreTriple> bert;
};

double metric_value(const PairScores& s, Metric m);
bool has_metric(const PairScores& s, Metric m);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// Mean and population std per metric component over the pairs that carry it.
struct ScoreReport {
  std::size_t pairs = 0;
  std::array<std::optional<MetricSummary>, kMetricCount> metrics{};

  const std::optional<MetricSummary>& operator[](Metric m) const {
    return metrics[static_cast<std::size_t>(m)];
  }
};

ScoreReport aggregate_scores(std::span<const PairScores> per_pair);

// "0.744_{0.100}"
std::string format_mean_std(double mean, double std, int digits = 3);

}  // namespace qc
