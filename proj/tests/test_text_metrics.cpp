#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "qc/error.hpp"
#include "qc/text_metrics.hpp"

namespace {

qc::TokenEmbeddingSet to_set(const oracle::Vectors& v) {
  qc::TokenEmbeddingSet::Matrix m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v[0].size()));
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < v.size(); ++i) {
    tokens.push_back("t" + std::to_string(i));
    for (std::size_t j = 0; j < v[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j];
  }
  return {tokens, m};
}

oracle::Vectors random_vectors(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> g;
  oracle::Vectors v(n, std::vector<double>(dim));
  for (auto& row : v) {
    for (auto& x : row) x = g(rng);
  }
  return v;
}

}  // namespace

TEST_SUITE("text_metrics") {
  TEST_CASE("tokenizer lowercases word runs") {
    CHECK(qc::tokenize_for_rouge("The Cat's  hat, 2x!") == std::vector<std::string>{"the", "cat", "s", "hat", "2x"});
    CHECK(qc::tokenize_for_rouge(" ... ").empty());
  }

  TEST_CASE("rouge matches the brute-force oracle on random pairs") {
    std::mt19937_64 rng(123);
    for (int i = 0; i < 300; ++i) {
      const auto c = oracle::random_sentence(rng, 9), r = oracle::random_sentence(rng, 9);
      const auto got = qc::rouge(c, r);
      const auto want = oracle::rouge(c, r);
      CAPTURE(c);
      CAPTURE(r);
      CHECK(got.rouge1.precision == want.r1.p);
      CHECK(got.rouge1.recall == want.r1.r);
      CHECK(got.rouge1.f1 == want.r1.f);
      CHECK(got.rouge2.f1 == want.r2.f);
      CHECK(got.rougeL.precision == want.rl.p);
      CHECK(got.rougeL.recall == want.rl.r);
      CHECK(got.rougeL.f1 == want.rl.f);
    }
  }

  TEST_CASE("rouge edge cases") {
    const auto same = qc::rouge("weather forecast", "Weather forecast.");
    CHECK(same.rouge1.f1 == 1.0);
    CHECK(same.rouge2.f1 == 1.0);
    CHECK(same.rougeL.f1 == 1.0);
    const auto empty = qc::rouge("", "weather");
    CHECK(empty == qc::RougeScores{});
    // Single tokens have no bigrams: ROUGE-2 is 0 even for an exact match.
    CHECK(qc::rouge("weather", "weather").rouge2.f1 == 0.0);
    CHECK(qc::rouge("a b", "c d").rouge1.f1 == 0.0);
    // Clipping: repeated candidate tokens count at most as often as in the reference.
    CHECK(qc::rouge("the the the", "the cat").rouge1.precision == doctest::Approx(1.0 / 3.0));
    CHECK(qc::lcs_length(std::vector<std::string>{"a", "b", "c", "d"}, std::vector<std::string>{"b", "d", "a"}) == 2);
    CHECK_THROWS_AS(qc::ngram_overlap(std::vector<std::string>{"a"}, std::vector<std::string>{"a"}, 0),
                    qc::PreconditionError);
  }

  TEST_CASE("rouge is symmetric in F1 and swaps precision with recall") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
      const auto a = oracle::random_sentence(rng, 8), b = oracle::random_sentence(rng, 8);
      const auto ab = qc::rouge(a, b), ba = qc::rouge(b, a);
      CHECK(ab.rouge1.precision == ba.rouge1.recall);
      CHECK(ab.rougeL.f1 == doctest::Approx(ba.rougeL.f1));
    }
  }

  TEST_CASE("bertscore matches the brute-force max-cosine oracle") {
    std::mt19937_64 rng(77);
    for (int i = 0; i < 200; ++i) {
      const std::size_t dim = 2 + rng() % 7;
      const auto c = random_vectors(rng, 1 + rng() % 6, dim);
      const auto r = random_vectors(rng, 1 + rng() % 6, dim);
      const auto got = qc::bertscore(to_set(c), to_set(r));
      const auto want = oracle::bertscore(c, r);
      CHECK(std::abs(got.precision - want.p) < 1e-12);
      CHECK(std::abs(got.recall - want.r) < 1e-12);
      CHECK(std::abs(got.f1 - want.f) < 1e-12);
    }
  }

  TEST_CASE("bertscore properties") {
    std::mt19937_64 rng(5);
    const auto v = random_vectors(rng, 4, 5);
    const auto s = qc::bertscore(to_set(v), to_set(v));
    CHECK(s.precision == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(1.0).epsilon(1e-12));
    // Scaling a vector does not change cosines.
    auto scaled = v;
    for (auto& x : scaled[0]) x *= 7.5;
    CHECK(qc::bertscore(to_set(scaled), to_set(v)).f1 == doctest::Approx(1.0).epsilon(1e-12));
    // float instantiation agrees with double to float precision.
    qc::BasicTokenEmbeddingSet<float> fc({"a", "b"}, to_set(v).vectors.topRows(2).cast<float>());
    qc::BasicTokenEmbeddingSet<float> fr({"c"}, to_set(v).vectors.bottomRows(1).cast<float>());
    const auto fs = qc::bertscore(fc, fr);
    const auto ds = oracle::bertscore({v[0], v[1]}, {v[3]});
    CHECK(fs.f1 == doctest::Approx(ds.f).epsilon(1e-5));
  }

  TEST_CASE("bertscore errors") {
    oracle::Vectors zero{{0.0, 0.0}}, ok{{1.0, 0.0}}, wide{{1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(qc::bertscore(to_set(zero), to_set(ok)), qc::DegenerateVectorError);
    CHECK_THROWS_AS(qc::bertscore(to_set(ok), to_set(zero)), qc::DegenerateVectorError);
    CHECK_THROWS_AS(qc::bertscore(to_set(ok), to_set(wide)), qc::ContractError);
    CHECK_THROWS_AS(qc::bertscore(qc::TokenEmbeddingSet{}, to_set(ok)), qc::PreconditionError);
    CHECK_THROWS_AS(qc::TokenEmbeddingSet({"a", "b"}, to_set(ok).vectors), qc::ContractError);
  }

  TEST_CASE("aggregation uses the population standard deviation") {
    std::vector<qc::PairScores> scores(3);
    const double f1[] = {0.2, 0.4, 0.9};
    for (int i = 0; i < 3; ++i) {
      scores[static_cast<std::size_t>(i)].bert = qc::BertScoreTriple{f1[i], f1[i], f1[i]};
    }
    scores[0].rouge = qc::rouge("a b", "a b");
    const auto r = qc::aggregate_scores(scores);
    CHECK(r.pairs == 3);
    const double mean = 1.5 / 3, var = ((0.2 - mean) * (0.2 - mean) + (0.4 - mean) * (0.4 - mean) + (0.9 - mean) * (0.9 - mean)) / 3;
    CHECK(r[qc::Metric::bert_f1]->mean == doctest::Approx(mean));
    CHECK(r[qc::Metric::bert_f1]->std == doctest::Approx(std::sqrt(var)));
    CHECK(r[qc::Metric::rouge1_f1]->count == 1);
    CHECK(qc::format_mean_std(0.7444, 0.1) == "0.744_{0.100}");
    CHECK_THROWS_AS(qc::aggregate_scores({}), qc::PreconditionError);
  }

  TEST_CASE("metric names are unique") {
    std::set<std::string_view> names;
    for (auto m : qc::kAllMetrics) names.insert(qc::metric_name(m));
    CHECK(names.size() == qc::kMetricCount);
  }
}
