#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "qc/corpus.hpp"
#include "qc/error.hpp"
#include "qc/util.hpp"

namespace {

qc::Dataset synthetic(const std::map<std::string, std::size_t>& sizes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<qc::QuoteCodePair> pairs;
  std::size_t id = 0;
  for (const auto& [source, n] : sizes) {
    for (std::size_t i = 0; i < n; ++i) {
      qc::QuoteCodePair p;
      p.id = "p" + std::to_string(++id);
      p.quote = oracle::random_sentence(rng, 20) + " end";
      p.code = "code " + std::to_string(rng() % 17);
      p.source = source;
      pairs.push_back(p);
    }
  }
  return qc::Dataset(pairs);
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("jsonl parsing fills defaults and generates ids") {
    const auto d = qc::parse_dataset(
        R"({"id": "a", "quote": "q1", "code": "c1", "source": "s"}
{"quote": "q2", "code": "c2"}
)",
        qc::DatasetFormat::jsonl);
    REQUIRE(d.size() == 2);
    CHECK(d.pairs()[1].id == "row-2");
    CHECK(d.pairs()[1].source == qc::kUnspecifiedSource);
    CHECK(d.pairs()[0].split == qc::Split::unassigned);
  }

  TEST_CASE("csv parsing and round trip through both formats") {
    const std::string csv = "id,quote,code,source,split\r\nx,\"Hello, world\",greeting,s1,train\r\ny,Bye,farewell,s2,test\r\n";
    const auto d = qc::parse_dataset(csv, qc::DatasetFormat::csv);
    CHECK(d.pairs()[0].quote == "Hello, world");
    CHECK(d.pairs()[1].split == qc::Split::test);
    for (auto fmt : {qc::DatasetFormat::csv, qc::DatasetFormat::jsonl}) {
      CHECK(qc::parse_dataset(qc::serialize_dataset(d, fmt), fmt) == d);
    }
  }

  TEST_CASE("schema errors") {
    CHECK_THROWS_AS(qc::parse_dataset(R"({"id": "a", "quote": "", "code": "c"})", qc::DatasetFormat::jsonl),
                    qc::SchemaError);
    CHECK_THROWS_AS(qc::parse_dataset(R"({"id": "a", "quote": "q"})", qc::DatasetFormat::jsonl), qc::SchemaError);
    CHECK_THROWS_AS(qc::parse_dataset("{\"id\": \"a\", \"quote\": \"q\", \"code\": \"c\"}\n"
                                      "{\"id\": \"a\", \"quote\": \"q\", \"code\": \"c\"}\n",
                                      qc::DatasetFormat::jsonl),
                    qc::SchemaError);
    CHECK_THROWS_AS(qc::parse_dataset("", qc::DatasetFormat::jsonl), qc::EmptyDatasetError);
    CHECK_THROWS_AS(qc::parse_dataset(R"({"quote": "q", "code": "c", "split": "dev"})", qc::DatasetFormat::jsonl),
                    qc::SchemaError);
    CHECK_THROWS_AS(qc::load_dataset("/nonexistent/x.jsonl", qc::DatasetFormat::jsonl), qc::IoError);
  }

  TEST_CASE("merge prefixes colliding ids only") {
    const auto a = qc::parse_dataset(R"({"id": "1", "quote": "q", "code": "c"})", qc::DatasetFormat::jsonl);
    const auto b = qc::parse_dataset("{\"id\": \"1\", \"quote\": \"r\", \"code\": \"d\"}\n"
                                     "{\"id\": \"2\", \"quote\": \"s\", \"code\": \"e\"}\n",
                                     qc::DatasetFormat::jsonl);
    const auto m = qc::merge(a, b, "social", "semeval");
    REQUIRE(m.size() == 3);
    CHECK(m.pairs()[0].id == "social/1");
    CHECK(m.pairs()[1].id == "semeval/1");
    CHECK(m.pairs()[2].id == "2");
  }

  TEST_CASE("largest-remainder allocation matches the oracle on random source sizes") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      std::map<std::string, std::size_t> sizes;
      const std::size_t k = 1 + rng() % 12;
      for (std::size_t i = 0; i < k; ++i) sizes["s" + std::to_string(i)] = 1 + rng() % 200;
      const double fraction = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
      const auto got = qc::allocate_test_counts(sizes, fraction);
      CHECK(got == oracle::largest_remainder(sizes, fraction));
      std::size_t total = 0, want = 0;
      for (const auto& [s, n] : sizes) {
        total += n;
        CHECK(got.at(s) <= n);
      }
      for (const auto& [_, n] : got) want += n;
      CHECK(want == static_cast<std::size_t>(std::llround(static_cast<double>(total) * fraction)));
    }
    CHECK_THROWS_AS(qc::allocate_test_counts({{"a", 3}}, 0.0), qc::PreconditionError);
    CHECK_THROWS_AS(qc::allocate_test_counts({{"a", 3}}, 1.0), qc::PreconditionError);
  }

  TEST_CASE("split is stratified, complete and deterministic") {
    const std::map<std::string, std::size_t> sizes{{"a", 37}, {"b", 12}, {"c", 51}};
    const auto d = synthetic(sizes, 5);
    const auto s1 = qc::split_dataset(d, 0.1, 42);
    const auto s2 = qc::split_dataset(d, 0.1, 42);
    CHECK(s1 == s2);
    const auto want = oracle::largest_remainder(sizes, 0.1);
    std::map<std::string, std::size_t> got;
    for (const auto& p : s1.pairs()) {
      CHECK(p.split != qc::Split::unassigned);
      if (p.split == qc::Split::test) ++got[p.source];
    }
    for (const auto& [s, n] : want) CHECK(got[s] == n);
    CHECK(qc::split_dataset(d, 0.1, 43) != s1);
  }

  TEST_CASE("stats match a brute-force recount") {
    const auto d = qc::split_dataset(synthetic({{"x", 30}, {"y", 7}}, 9), 0.2, 1);
    const auto stats = qc::compute_stats(d);
    std::size_t sum = 0, sum_sq = 0;
    std::set<std::string> codes;
    for (const auto& p : d.pairs()) {
      const auto len = qc::utf8_length(p.quote);
      sum += len;
      sum_sq += len * len;
      codes.insert(p.code);
    }
    const auto n = d.size();
    CHECK(stats.overall.total == n);
    CHECK(stats.overall.unique_codes == codes.size());
    CHECK(stats.overall.quote_len_mean == static_cast<double>(sum) / static_cast<double>(n));
    CHECK(stats.overall.quote_len_std ==
          std::sqrt(static_cast<double>(n * sum_sq - sum * sum) / static_cast<double>(n * n)));
    CHECK(stats.per_split.at(qc::Split::test).total + stats.per_split.at(qc::Split::train).total == n);
    const auto j = qc::to_json(stats);
    CHECK(j["total"] == n);
    CHECK(j["per_split"]["test"]["total"] == stats.per_split.at(qc::Split::test).total);
  }

  TEST_CASE("token length unit counts whitespace tokens") {
    CHECK(qc::text_length("a  b c", qc::LengthUnit::tokens) == 3);
    CHECK(qc::text_length("a  b c", qc::LengthUnit::characters) == 6);
  }
}
