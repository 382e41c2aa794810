#include <doctest.h>

#include "qc/error.hpp"
#include "qc/toml.hpp"

TEST_SUITE("toml") {
  TEST_CASE("scalars, tables and arrays of tables") {
    const auto j = qc::parse_toml(R"(# header
name = "demo"   # trailing
'literal key' = 'C:\path'
count = 3
ratio = 0.25
neg = -1.5e2
flag = true
list = [1, 2,
        3,]   # spans lines
[split]
seed = 42
[a.b]
c = "nested"
[[endpoint]]
name = "x"
[[endpoint]]
name = "y"
)");
    CHECK(j["name"] == "demo");
    CHECK(j["literal key"] == "C:\\path");
    CHECK(j["count"] == 3);
    CHECK(j["ratio"] == 0.25);
    CHECK(j["neg"] == -150.0);
    CHECK(j["flag"] == true);
    CHECK(j["list"] == nlohmann::json::array({1, 2, 3}));
    CHECK(j["split"]["seed"] == 42);
    CHECK(j["a"]["b"]["c"] == "nested");
    REQUIRE(j["endpoint"].size() == 2);
    CHECK(j["endpoint"][1]["name"] == "y");
  }

  TEST_CASE("string escapes") {
    const auto j = qc::parse_toml(R"(s = "a\tb\n\"q\" \u00e9")");
    CHECK(j["s"] == "a\tb\n\"q\" \u00e9");
    CHECK(qc::parse_toml("s = \"has # hash\"")["s"] == "has # hash");
  }

  TEST_CASE("errors carry the line number") {
    try {
      qc::parse_toml("a = 1\nb = \n");
      FAIL("expected ConfigError");
    } catch (const qc::ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(qc::parse_toml("a = 1\na = 2"), qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_toml("a.b = 1"), qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_toml("a = \"open"), qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_toml("[t\nx = 1"), qc::ConfigError);
    CHECK_THROWS_AS(qc::parse_toml("a = [1, 2"), qc::ConfigError);
  }
}
