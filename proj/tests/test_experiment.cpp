#include <doctest.h>

#include <atomic>

#include "oracles.hpp"
#include "qc/error.hpp"
#include "qc/experiment.hpp"
#include "qc/util.hpp"

namespace fs = std::filesystem;

namespace {

qc::ExperimentConfig demo_config(const fs::path& out) {
  auto c = qc::load_config(oracle::data_dir() / "fixtures" / "demo.toml");
  c.output_dir = out;
  c.cache_dir = out / "cache";
  return c;
}

// Answers with a fixed word and fails every call whose prompt contains `poison`.
struct ScriptedClient : qc::ChatClient {
  std::string poison;
  std::atomic<int> calls{0};
  std::string complete(const qc::ModelEndpoint&, const std::string& prompt) override {
    ++calls;
    if (!poison.empty() && prompt.find(poison) != std::string::npos) throw qc::TransportError("scripted failure");
    return "scripted answer";
  }
};

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config parsing resolves paths and validates") {
    const auto c = qc::load_config(oracle::data_dir() / "fixtures" / "demo.toml");
    CHECK(c.name == "demo");
    CHECK(c.dataset == oracle::data_dir() / "fixtures" / "demo.jsonl");
    CHECK(c.test_fraction == 0.25);
    CHECK(c.shot_counts == std::vector<int>{0, 3});
    REQUIRE(c.templates.size() == 2);
    CHECK(c.templates[1].key() == "P3.linebreak");
    REQUIRE(c.endpoints.size() == 1);
    CHECK(c.endpoints[0].is_stub());
    CHECK_THROWS_AS(qc::parse_config("name = \"x\"\ndataset = \"d.jsonl\"\n"), qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_config("name = \"x\"\ndataset = \"d.jsonl\"\nbogus = 1\n"
                                     "[[endpoint]]\nname = \"a\"\nbase_url = \"stub://echo\"\n"),
                    qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_config("dataset = \"d.jsonl\"\n[fewshot]\nshots = [2]\n"
                                     "[[endpoint]]\nname = \"a\"\nbase_url = \"stub://echo\"\n"),
                    qc::PreconditionError);
    const auto j = qc::parse_config(R"({"dataset": "d.jsonl", "endpoint": [{"name": "a", "base_url": "stub://echo"}]})");
    CHECK(j.endpoints[0].model_id == "a");
  }

  TEST_CASE("config digest ignores paths and concurrency only") {
    auto a = qc::load_config(oracle::data_dir() / "fixtures" / "demo.toml");
    const auto d = qc::config_digest(a, "ds");
    auto b = a;
    b.output_dir = "/elsewhere";
    b.cache_dir = "/cache";
    b.concurrency = 1;
    b.name = "renamed";
    CHECK(qc::config_digest(b, "ds") == d);
    CHECK(qc::config_digest(a, "ds2") != d);
    b.selection_seed = 7;
    CHECK(qc::config_digest(b, "ds") != d);
    b = a;
    b.endpoints[0].params.temperature = 0.1;
    CHECK(qc::config_digest(b, "ds") != d);
    b = a;
    b.shot_counts = {0};
    CHECK(qc::config_digest(b, "ds") != d);
  }

  TEST_CASE("plan has the full condition grid and nested examples") {
    const auto plan = qc::plan_run(qc::load_config(oracle::data_dir() / "fixtures" / "demo.toml"));
    CHECK(plan.test.size() == 10);
    CHECK(plan.train.size() == 30);
    REQUIRE(plan.conditions.size() == 4);
    CHECK(plan.conditions[0].id() == "echo__P1.period__k0");
    for (const auto& c : plan.conditions) {
      CHECK(c.examples.size() == static_cast<std::size_t>(c.k));
      for (const auto& e : c.examples) CHECK(e.split == qc::Split::train);
    }
  }

  TEST_CASE("end-to-end stub run, warm rerun and reload") {
    const auto dir = oracle::temp_dir("run");
    const auto config = demo_config(dir);
    const auto first = qc::run(config);
    CHECK_FALSE(first.aborted);
    REQUIRE(first.conditions.size() == 4);
    for (const auto& c : first.conditions) {
      CHECK(c.ok == 10);
      CHECK((*c.aggregate)[qc::Metric::rouge1_f1]->mean == 1.0);
      CHECK((*c.aggregate)[qc::Metric::bert_f1]->mean == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(first.cache.network_calls == 40);
    const auto csv = qc::read_file(dir / "report" / "conditions.csv");
    const auto txt = qc::read_file(dir / "report" / "conditions.txt");

    const auto second = qc::run(config);
    CHECK(second.cache.network_calls == 0);
    CHECK(qc::read_file(dir / "report" / "conditions.csv") == csv);
    CHECK(qc::read_file(dir / "report" / "conditions.txt") == txt);

    // Dropping the run files but keeping the cache replays without calls.
    fs::remove_all(dir / "conditions");
    fs::remove(dir / "manifest.json");
    const auto third = qc::run(config);
    CHECK(third.cache.network_calls == 0);
    CHECK(third.cache.hits == 40);
    CHECK(qc::read_file(dir / "report" / "conditions.csv") == csv);

    const auto loaded = qc::load_run(dir);
    CHECK(loaded.run_id == first.run_id);
    CHECK(qc::format_conditions_csv(qc::report_conditions(loaded)) == csv);
    const auto rows = qc::parse_conditions_csv(csv);
    CHECK(qc::format_conditions_csv(rows) == csv);

    auto other = config;
    other.selection_seed = 99;
    CHECK_THROWS_AS(qc::run(other), qc::ConfigError);
    fs::remove_all(dir);
  }

  TEST_CASE("failed cells are recorded and redone on resume") {
    const auto dir = oracle::temp_dir("resume");
    const auto config = demo_config(dir);
    const auto plan = qc::plan_run(config);
    auto client = std::make_shared<ScriptedClient>();
    client->poison = "Sentence: " + plan.test[0].quote + "\nCode:";
    qc::RunOptions opt;
    opt.client = client;
    const auto first = qc::run(config, opt);
    CHECK_FALSE(first.aborted);
    // Partial failures do not count as a failed condition.
    CHECK_FALSE(first.any_condition_failed());
    for (const auto& c : first.conditions) {
      CHECK(c.failed == 1);
      CHECK(c.cells[0].error_kind == "transport");
    }
    client->poison.clear();
    client->calls = 0;
    const auto second = qc::run(config, opt);
    CHECK(client->calls == 4);
    for (const auto& c : second.conditions) CHECK(c.failed == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("a condition where every cell fails stops the run") {
    const auto dir = oracle::temp_dir("abort");
    auto config = demo_config(dir);
    config.endpoints[0].base_url = "stub://fail";
    const auto r = qc::run(config);
    CHECK(r.aborted);
    CHECK(r.conditions.size() == 1);
    CHECK(r.conditions[0].fully_failed());
    CHECK(qc::load_run(dir).aborted);
    fs::remove_all(dir);
  }

  TEST_CASE("recorded trace replays offline into the report shape") {
    const auto dir = oracle::temp_dir("trace");
    auto config = qc::load_config(oracle::data_dir() / "fixtures" / "trace" / "trace.toml");
    fs::copy(config.cache_dir, dir / "cache", fs::copy_options::recursive);
    config.output_dir = dir;
    config.cache_dir = dir / "cache";
    qc::RunOptions opt;
    opt.retry.max_retries = 0;
    const auto r = qc::run(config, opt);
    CHECK(r.cache.network_calls == 0);
    CHECK_FALSE(r.any_condition_failed());
    const auto rows = qc::report_conditions(r);
    CHECK(rows.size() == 24);
    for (const auto& row : rows) {
      CHECK(row.n == 10);
      for (const auto& m : row.metrics) CHECK(m.has_value());
      CHECK(*row.metrics[4] >= 0.0);
      CHECK(*row.metrics[4] <= 1.0);
    }
    const auto text = qc::format_conditions_text(rows);
    CHECK(text.rfind("Model  ", 0) == 0);
    CHECK(text.find("Finetuning + Few-shot (3 examples)") != std::string::npos);
    CHECK(text.find("_{") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("size sweep") {
    std::vector<qc::SweepPoint> pts{{"a", 400, 0.8, 0.1, 10}, {"a", 100, 0.7, 0.1, 10}, {"b", 100, 0.6, 0.1, 10}};
    const auto s = qc::size_sweep(pts);
    REQUIRE(s.size() == 2);
    CHECK(s[0].points[0].train_size == 100);
    CHECK(qc::format_size_sweep_csv(s).rfind("model,train_size,bert_f1", 0) == 0);
    CHECK_THROWS_AS(qc::size_sweep({{"a", 1, 0, 0, 1}, {"b", 1, 0, 0, 1}}), qc::PreconditionError);
    CHECK_THROWS_AS(qc::size_sweep({{"a", 1, 0, 0, 1}, {"a", 1, 0, 0, 1}, {"a", 2, 0, 0, 1}}), qc::ValidationError);
  }
}
