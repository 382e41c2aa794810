#include "qc/text_metrics.hpp"

#include <cstdio>
#include <map>

#include "qc/util.hpp"

namespace qc {

std::vector<std::string> tokenize_for_rouge(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char32_t cp : decode_utf8(text)) {
    if (is_word_char(cp)) {
      if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
      append_utf8(current, cp);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens,
                                                             std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t ngram_total(std::size_t length, std::size_t n) { return length >= n ? length - n + 1 : 0; }

PrecisionRecallF1 prf(std::size_t overlap, std::size_t cand_units, std::size_t ref_units) {
  PrecisionRecallF1 s;
  if (cand_units == 0 || ref_units == 0) return s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(cand_units);
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref_units);
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

}  // namespace

std::size_t ngram_overlap(std::span<const std::string> candidate,
                          std::span<const std::string> reference, std::size_t n) {
  if (n == 0) throw PreconditionError("n-gram order must be positive");
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScores rouge_tokens(std::span<const std::string> candidate,
                         std::span<const std::string> reference) {
  RougeScores s;
  if (candidate.empty() || reference.empty()) return s;
  s.rouge1 = prf(ngram_overlap(candidate, reference, 1), candidate.size(), reference.size());
  s.rouge2 = prf(ngram_overlap(candidate, reference, 2), ngram_total(candidate.size(), 2),
                 ngram_total(reference.size(), 2));
  s.rougeL = prf(lcs_length(candidate, reference), candidate.size(), reference.size());
  return s;
}

RougeScores rouge(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize_for_rouge(candidate);
  const auto r = tokenize_for_rouge(reference);
  return rouge_tokens(c, r);
}

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::bert_p:
      return "bert_p";
    case Metric::bert_r:
      return "bert_r";
    case Metric::bert_f1:
      return "bert_f1";
    case Metric::rouge1_p:
      return "rouge1_p";
    case Metric::rouge1_r:
      return "rouge1_r";
    case Metric::rouge1_f1:
      return "rouge1_f1";
    case Metric::rouge2_p:
      return "rouge2_p";
    case Metric::rouge2_r:
      return "rouge2_r";
    case Metric::rouge2_f1:
      return "rouge2_f1";
    case Metric::rougeL_p:
      return "rougeL_p";
    case Metric::rougeL_r:
      return "rougeL_r";
    case Metric::rougeL_f1:
      return "rougeL_f1";
  }
  return "?";
}

bool is_bert_metric(Metric m) {
  return m == Metric::bert_p || m == Metric::bert_r || m == Metric::bert_f1;
}

bool has_metric(const PairScores& s, Metric m) {
  return is_bert_metric(m) ? s.bert.has_value() : s.rouge.has_value();
}

double metric_value(const PairScores& s, Metric m) {
  if (!has_metric(s, m)) throw PreconditionError("pair has no value for " + std::string(metric_name(m)));
  switch (m) {
    case Metric::bert_p:
      return s.bert->precision;
    case Metric::bert_r:
      return s.bert->recall;
    case Metric::bert_f1:
      return s.bert->f1;
    case Metric::rouge1_p:
      return s.rouge->rouge1.precision;
    case Metric::rouge1_r:
      return s.rouge->rouge1.recall;
    case Metric::rouge1_f1:
      return s.rouge->rouge1.f1;
    case Metric::rouge2_p:
      return s.rouge->rouge2.precision;
    case Metric::rouge2_r:
      return s.rouge->rouge2.recall;
    case Metric::rouge2_f1:
      return s.rouge->rouge2.f1;
    case Metric::rougeL_p:
      return s.rouge->rougeL.precision;
    case Metric::rougeL_r:
      return s.rouge->rougeL.recall;
    case Metric::rougeL_f1:
      return s.rouge->rougeL.f1;
  }
  return 0.0;
}

ScoreReport aggregate_scores(std::span<const PairScores> per_pair) {
  if (per_pair.empty()) throw PreconditionError("cannot aggregate an empty list of scores");
  ScoreReport report;
  report.pairs = per_pair.size();
  for (Metric m : kAllMetrics) {
    std::vector<double> values;
    for (const auto& s : per_pair) {
      if (has_metric(s, m)) values.push_back(metric_value(s, m));
    }
    if (values.empty()) continue;
    auto ms = mean_std(values);
    report.metrics[static_cast<std::size_t>(m)] = MetricSummary{ms.mean, ms.std, values.size()};
  }
  return report;
}

std::string format_mean_std(double mean, double std, int digits) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f_{%.*f}", digits, mean, digits, std);
  return buf;
}

}  // namespace qc
