#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "qc/cli.hpp"
#include "qc/util.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = qc::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string fixture(const std::string& name) { return (oracle::data_dir() / "fixtures" / name).string(); }

std::vector<std::string> words(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(path);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("every command has help and usage errors exit 2") {
    const auto commands = qc::cli_commands();
    CHECK(commands.size() >= 17);
    for (const auto& c : commands) {
      CAPTURE(c);
      auto args = words(c);
      args.push_back("--help");
      const auto r = run(args);
      CHECK(r.code == qc::kExitOk);
      CHECK_FALSE((r.out + r.err).empty());
    }
    CHECK(run({}).code == qc::kExitUsage);
    CHECK(run({"bogus"}).code == qc::kExitUsage);
    CHECK(run({"dataset", "stats"}).code == qc::kExitUsage);
    CHECK(run({"dataset", "stats", fixture("demo.jsonl"), "--unit", "bytes"}).code == qc::kExitUsage);
  }

  TEST_CASE("operation failures exit 1 with the error kind") {
    // A missing path fails argument validation; bad content fails the operation.
    CHECK(run({"dataset", "stats", "/nonexistent.jsonl"}).code == qc::kExitUsage);
    const auto dir = oracle::temp_dir("cli-bad");
    qc::write_file_atomic(dir / "bad.jsonl", "{\"id\": \"a\", \"quote\": \"q\"}\n");
    const auto r = run({"dataset", "stats", (dir / "bad.jsonl").string()});
    CHECK(r.code == qc::kExitFailure);
    CHECK(r.err.find("error [schema]") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("dataset stats, split and merge") {
    const auto stats = nlohmann::json::parse(run({"dataset", "stats", fixture("demo.jsonl")}).out);
    CHECK(stats["total"] == 40);
    CHECK(stats["num_sources"] == 3);
    const auto dir = oracle::temp_dir("cli");
    const auto split = (dir / "split.jsonl").string();
    CHECK(run({"dataset", "split", fixture("demo.jsonl"), "--test-fraction", "0.25", "-o", split}).code == 0);
    const auto s2 = nlohmann::json::parse(run({"dataset", "stats", split}).out);
    CHECK(s2["per_split"]["test"]["total"] == 10);
    const auto merged = (dir / "merged.jsonl").string();
    CHECK(run({"dataset", "merge", fixture("demo.jsonl"), split, "-o", merged}).code == 0);
    CHECK(nlohmann::json::parse(run({"dataset", "stats", merged}).out)["total"] == 80);
    fs::remove_all(dir);
  }

  TEST_CASE("agree dgs reproduces the two-expert example") {
    const auto r = run({"agree", "dgs", "--ratings", fixture("dgs_two_experts.csv"), "--source", "M"});
    CHECK(r.code == 0);
    CHECK(qc::trim(r.out) == "1.5");
    const auto table = run({"agree", "dgs", "--ratings", fixture("dgs_ratings.csv"), "--difficulty",
                            fixture("dgs_difficulty.csv"), "--format", "csv"});
    CHECK(table.code == 0);
    CHECK(table.out.find("M,0.5") != std::string::npos);
  }

  TEST_CASE("agree alpha, difficulty, buckets and correlate") {
    const auto dir = oracle::temp_dir("cli-agree");
    qc::write_file_atomic(dir / "m.csv", "item,A,B,C\nu1,1,1,1\nu2,2,2,3\nu3,3,3,3\nu4,1,2,1\n");
    const auto alpha = run({"agree", "alpha", "--matrix", (dir / "m.csv").string(), "--scale", "ordinal"});
    CHECK(alpha.code == 0);
    CHECK(alpha.out.find("alpha") != std::string::npos);
    const auto diff = run({"agree", "difficulty", "--ratings", fixture("dgs_difficulty.csv")});
    CHECK(diff.code == 0);
    CHECK(diff.out.find("S2") != std::string::npos);
    CHECK(run({"agree", "buckets", "--ratings", fixture("dgs_ratings.csv"), "--difficulty",
               fixture("dgs_difficulty.csv")}).code == 0);
    qc::write_file_atomic(dir / "xy.csv", "x,y\n1,2\n2,4\n3,7\n4,8\n");
    const auto corr = run({"agree", "correlate", (dir / "xy.csv").string(), "--x", "x", "--y", "y", "--method", "spearman"});
    CHECK(corr.code == 0);
    CHECK(corr.out.find('1') != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("score computes metrics per pair") {
    const auto dir = oracle::temp_dir("cli-score");
    qc::write_file_atomic(dir / "pred.txt", "food quality\nslow service\n");
    qc::write_file_atomic(dir / "ref.txt", "food quality\nfast service\n");
    const auto r = run({"score", "--pred", (dir / "pred.txt").string(), "--ref", (dir / "ref.txt").string(),
                        "--format", "json"});
    CHECK(r.code == 0);
    CHECK(r.out.find("rouge1") != std::string::npos);
    qc::write_file_atomic(dir / "short.txt", "one\n");
    CHECK(run({"score", "--pred", (dir / "short.txt").string(), "--ref", (dir / "ref.txt").string()}).code != 0);
    fs::remove_all(dir);
  }

  TEST_CASE("run and report") {
    const auto dir = oracle::temp_dir("cli-run");
    const auto r = run({"run", fixture("demo.toml"), "--output-dir", dir.string()});
    CHECK(r.code == 0);
    const auto summary = nlohmann::json::parse(r.out);
    CHECK(summary["status"] == "complete");
    const auto text = run({"report", "conditions", dir.string()});
    CHECK(text.code == 0);
    CHECK(text.out.find("Zero-shot") != std::string::npos);
    const auto again = nlohmann::json::parse(run({"run", fixture("demo.toml"), "--output-dir", dir.string()}).out);
    CHECK(again["cache"]["network_calls"] == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("prompt commands") {
    CHECK(run({"prompt", "list"}).out.find("P6.linebreak") != std::string::npos);
    const auto r = run({"prompt", "render", "--template", "P1", "--quote", "Nice food."});
    CHECK(r.out.find("Sentence: Nice food.\nCode:") != std::string::npos);
    CHECK(qc::trim(run({"prompt", "clean", "--text", "  \"Weather.\" "}).out) == "Weather");
  }

  TEST_CASE("readability") {
    const auto r = run({"readability", (oracle::data_dir() / "reference_quotes.jsonl").string()});
    CHECK(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).size() == 15);
  }
}
