#include <doctest.h>

#include <thread>

#include "oracles.hpp"
#include "qc/agreement.hpp"
#include "qc/annotation.hpp"
#include "qc/error.hpp"
#include "qc/util.hpp"

// After Eigen (via agreement.hpp): <resolv.h> defines a `_res` macro.
#include "qc/annotation_http.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kRaters{"E1", "E2", "E3"};

qc::ProjectSpec spec(std::size_t sentences = 15) {
  qc::ProjectSpec s;
  s.id = "study";
  s.raters = kRaters;
  s.seed = 7;
  for (std::size_t i = 1; i <= sentences; ++i) {
    const auto n = std::to_string(i);
    s.sentences.push_back({"s" + n, "Sentence number " + n + ".", "gold " + n});
  }
  return s;
}

// E1 and E2 agree on odd sentences; E3 always writes its own label.
std::string stage1_code(const std::string& rater, std::size_t i) {
  if (rater == "E3") return "e3 label " + std::to_string(i);
  if (i % 2 == 1) return "shared " + std::to_string(i);
  return rater + " label " + std::to_string(i);
}

qc::FreezeInput models(std::size_t sentences = 15) {
  qc::FreezeInput in;
  for (std::size_t i = 1; i <= sentences; ++i) {
    const auto n = std::to_string(i);
    // M1 reproduces the golden label, M2 never does.
    in.model_labels["s" + n] = {{"M1", "gold " + n}, {"M2", "model guess " + n}};
  }
  return in;
}

int rating_for(const std::string& text) {
  if (text.rfind("gold", 0) == 0) return 5;
  if (text.rfind("shared", 0) == 0) return 4;
  if (text.rfind("model", 0) == 0) return 2;
  return 3;
}

void run_stage1(qc::AnnotationService& svc, std::size_t sentences = 15) {
  for (const auto& r : kRaters) {
    for (std::size_t i = 1; i <= sentences; ++i) {
      svc.submit_stage1("study", r, "s" + std::to_string(i), stage1_code(r, i), 1 + static_cast<int>((i + r.back()) % 3));
    }
  }
}

void run_stage2(qc::AnnotationService& svc) {
  for (const auto& a : svc.assignments("study")) {
    const auto pool = svc.label_pool("study", a.sentence);
    for (const auto& h : a.handles) {
      const auto it = std::find_if(pool.begin(), pool.end(), [&](const qc::LabelHandle& l) { return l.handle == h; });
      svc.submit_rating("study", a.rater, a.sentence, h, rating_for(it->text));
    }
  }
}

class LiveServer {
 public:
  LiveServer(qc::AnnotationService& svc, const std::string& admin) {
    qc::mount_annotation_api(server_, svc, {admin, {}});
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  std::pair<int, json> call(const std::string& method, const std::string& path, const std::string& token,
                            const json& body = nullptr) {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    httplib::Result r = method == "GET" ? client_->Get(path, h)
                                        : client_->Post(path, h, body.is_null() ? "" : body.dump(), "application/json");
    REQUIRE(r);
    return {r->status, r->body.empty() ? json() : json::parse(r->body)};
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_SUITE("annotation") {
  TEST_CASE("project creation validates its input") {
    qc::AnnotationService svc;
    const auto created = svc.create_project(spec());
    CHECK(created.id == "study");
    CHECK(created.rater_tokens.size() == 3);
    CHECK(created.pending_stage1 == 45);
    CHECK(svc.rater_for_token("study", created.rater_tokens.at("E2")) == "E2");
    CHECK_THROWS_AS(svc.rater_for_token("study", "wrong"), qc::AuthenticationError);
    CHECK_THROWS_AS(svc.create_project(spec()), qc::ConflictError);
    auto bad = spec();
    bad.id = "x";
    bad.raters.clear();
    CHECK_THROWS_AS(svc.create_project(bad), qc::ValidationError);
    bad = spec();
    bad.id = "y";
    bad.sentences.push_back(bad.sentences[0]);
    CHECK_THROWS_AS(svc.create_project(bad), qc::ValidationError);
    bad = spec();
    bad.id = "z";
    bad.raters.push_back("GS");
    CHECK_THROWS_AS(svc.create_project(bad), qc::ValidationError);
    auto anon = spec();
    anon.id.clear();
    CHECK_FALSE(svc.create_project(anon).id.empty());
  }

  TEST_CASE("stage one accepts revisions and enforces ranges") {
    qc::AnnotationService svc;
    svc.create_project(spec(2));
    svc.submit_stage1("study", "E1", "s1", "first", 1);
    svc.submit_stage1("study", "E1", "s1", "second", 2);
    const auto h = svc.stage1_history("study");
    REQUIRE(h.size() == 2);
    CHECK(h[1].version == 2);
    CHECK_THROWS_AS(svc.submit_stage1("study", "E1", "s1", "x", 4), qc::ValidationError);
    CHECK_THROWS_AS(svc.submit_stage1("study", "E1", "s1", "  ", 1), qc::ValidationError);
    CHECK_THROWS_AS(svc.submit_stage1("study", "E9", "s1", "x", 1), qc::NotFoundError);
    CHECK_THROWS_AS(svc.submit_stage1("study", "E1", "s9", "x", 1), qc::NotFoundError);
    CHECK_THROWS_AS(svc.submit_rating("study", "E1", "s1", "h", 3), qc::StageError);
    // Freezing needs every stage-one submission.
    CHECK_THROWS_AS(svc.freeze_and_open_stage2("study", models(2)), qc::ValidationError);
  }

  TEST_CASE("freeze requires models and golden labels") {
    qc::AnnotationService svc;
    auto s = spec(2);
    s.sentences[1].golden.reset();
    svc.create_project(s);
    run_stage1(svc, 2);
    CHECK_THROWS_AS(svc.freeze_and_open_stage2("study", models(2)), qc::ValidationError);
    auto in = models(2);
    in.golden["s2"] = "gold 2";
    auto clash = in;
    clash.model_labels["s1"]["E1"] = "x";
    CHECK_THROWS_AS(svc.freeze_and_open_stage2("study", clash), qc::ValidationError);
    auto missing = in;
    missing.model_labels.erase("s2");
    CHECK_THROWS_AS(svc.freeze_and_open_stage2("study", missing), qc::ValidationError);
    CHECK_NOTHROW(svc.freeze_and_open_stage2("study", in));
    CHECK(svc.stage("study") == qc::ProjectStage::stage2_open);
    CHECK_THROWS_AS(svc.submit_stage1("study", "E1", "s1", "late", 1), qc::StageError);
  }

  TEST_CASE("label pools merge identical text and hide provenance") {
    qc::AnnotationService svc;
    svc.create_project(spec());
    run_stage1(svc);
    svc.freeze_and_open_stage2("study", models());
    const auto pool = svc.label_pool("study", "s1");
    // shared 1 (E1+E2), e3 label 1, gold 1 (M1+GS), model guess 1.
    REQUIRE(pool.size() == 4);
    for (const auto& l : pool) {
      if (l.text == "gold 1") CHECK(l.provenance.size() == 2);
      if (l.text == "shared 1") CHECK(l.provenance.size() == 2);
    }
    const auto assignments = svc.assignments("study");
    CHECK(assignments.size() == 45);
    for (const auto& a : assignments) {
      for (const auto& h : a.handles) {
        const auto it = std::find_if(pool.begin(), pool.end(), [&](const qc::LabelHandle& l) { return l.handle == h; });
        if (a.sentence != "s1" || it == pool.end()) continue;
        // Own-only labels are excluded; a label shared with another source stays.
        const bool own_only = std::all_of(it->provenance.begin(), it->provenance.end(), [&](const qc::Provenance& p) {
          return p.kind == qc::ProvenanceKind::coder && p.id == a.rater;
        });
        CHECK_FALSE(own_only);
      }
      if (a.rater == "E3" && a.sentence == "s1") CHECK(a.handles.size() == 3);
      if (a.rater == "E1" && a.sentence == "s1") CHECK(a.handles.size() == 4);
    }
    const auto tasks = svc.tasks("study", "E1");
    CHECK_FALSE(qc::payload_leaks_provenance(tasks));
    CHECK(qc::payload_leaks_provenance(json{{"labels", {{{"text", "x"}, {"source", "M1"}}}}}));
    const std::string dump = tasks.dump();
    CHECK(dump.find("M1") == std::string::npos);
    CHECK(dump.find("\"GS\"") == std::string::npos);
  }

  TEST_CASE("presentation order is seeded per rater and sentence") {
    auto orders = [](std::uint64_t seed) {
      qc::AnnotationService svc;
      auto s = spec();
      s.seed = seed;
      svc.create_project(s);
      run_stage1(svc);
      svc.freeze_and_open_stage2("study", models());
      std::vector<std::vector<std::string>> texts;
      for (const auto& a : svc.assignments("study")) {
        const auto pool = svc.label_pool("study", a.sentence);
        std::vector<std::string> t;
        for (const auto& h : a.handles) {
          t.push_back(std::find_if(pool.begin(), pool.end(), [&](const qc::LabelHandle& l) { return l.handle == h; })->text);
        }
        texts.push_back(t);
      }
      return texts;
    };
    CHECK(orders(7) == orders(7));
    CHECK(orders(7) != orders(8));
  }

  TEST_CASE("ratings, close and export round trip into deviation scores") {
    qc::AnnotationService svc;
    svc.create_project(spec());
    run_stage1(svc);
    svc.freeze_and_open_stage2("study", models());
    const auto a0 = svc.assignments("study")[0];
    CHECK_THROWS_AS(svc.submit_rating("study", a0.rater, a0.sentence, a0.handles[0], 6), qc::ValidationError);
    CHECK_THROWS_AS(svc.submit_rating("study", a0.rater, a0.sentence, "nope", 3), qc::NotFoundError);
    const auto partial = svc.export_matrices("study", true);
    CHECK(partial.completeness["complete"] == false);
    run_stage2(svc);
    CHECK_THROWS_AS(svc.export_matrices("study"), qc::StageError);
    svc.close_project("study");
    const auto bundle = svc.export_matrices("study");
    CHECK(bundle.completeness["complete"] == true);
    CHECK(qc::parse_csv(bundle.difficulty_csv).size() == 1 + 45);
    const auto difficulty = qc::parse_difficulty_ratings(bundle.difficulty_csv);
    CHECK(difficulty.size() == 45);
    CHECK(qc::summarize_difficulty(difficulty).size() == 15);

    const auto ratings = qc::parse_label_ratings(bundle.ratings_csv);
    for (std::size_t i = 1; i <= 15; ++i) {
      const auto s = "s" + std::to_string(i);
      CHECK(qc::dgs(ratings, "M1", s) == 0.0);
      CHECK(qc::dgs(ratings, "M2", s) == -3.0);
      CHECK(qc::dgs(ratings, "E3", s) == -2.0);
    }
    const auto table = qc::dgs_table(ratings, qc::summarize_difficulty(difficulty));
    CHECK(table.sources.at("M2").average == -3.0);
    CHECK(table.sources.at("E1").average == doctest::Approx((8 * -1.0 + 7 * -2.0) / 15.0));
    CHECK(qc::parse_csv(bundle.stage1_csv)[0] == std::vector<std::string>{"rater", "sentence", "code", "difficulty", "version"});
    CHECK(bundle.labels_csv.find("golden") != std::string::npos);
  }

  TEST_CASE("log replay rebuilds identical state, with and without snapshots") {
    for (std::size_t every : {std::size_t{1000}, std::size_t{7}}) {
      const auto dir = oracle::temp_dir("events");
      json before;
      std::uint64_t seq = 0;
      {
        qc::AnnotationService svc({dir, every, "GS"});
        svc.create_project(spec());
        run_stage1(svc);
        svc.freeze_and_open_stage2("study", models());
        run_stage2(svc);
        before = svc.state_json();
        seq = svc.last_sequence();
      }
      {
        qc::AnnotationService again({dir, every, "GS"});
        CHECK(again.state_json() == before);
        CHECK(again.last_sequence() == seq);
        again.close_project("study");
      }
      // A torn trailing line from a crash is ignored.
      {
        std::ofstream out(dir / "events.jsonl", std::ios::app);
        out << "{\"seq\": 99999, \"type\": \"rating_sub";
      }
      qc::AnnotationService third({dir, every, "GS"});
      CHECK(third.stage("study") == qc::ProjectStage::closed);
      CHECK(third.last_sequence() == seq + 1);
      fs::remove_all(dir);
    }
  }

  TEST_CASE("http api: auth, blinding and the full protocol") {
    qc::AnnotationService svc;
    LiveServer http(svc, "admin-secret");
    CHECK(http.call("GET", "/health", "").first == 200);

    json body{{"id", "study"}, {"seed", 7}, {"raters", kRaters}, {"sentences", json::array()}};
    for (std::size_t i = 1; i <= 3; ++i) {
      const auto n = std::to_string(i);
      body["sentences"].push_back({{"id", "s" + n}, {"text", "Sentence number " + n + "."}, {"golden", "gold " + n}});
    }
    CHECK(http.call("POST", "/projects", "", body).first == 401);
    CHECK(http.call("POST", "/projects", "not-admin", body).first == 403);
    auto [status, created] = http.call("POST", "/projects", "admin-secret", body);
    REQUIRE(status == 201);
    CHECK(http.call("POST", "/projects", "admin-secret", body).first == 409);
    std::map<std::string, std::string> tokens = created["rater_tokens"];

    for (const auto& r : kRaters) {
      for (std::size_t i = 1; i <= 3; ++i) {
        const json sub{{"project", "study"}, {"sentence", "s" + std::to_string(i)}, {"code", stage1_code(r, i)}, {"difficulty", 2}};
        CHECK(http.call("POST", "/stage1", tokens[r], sub).first == 200);
      }
    }
    CHECK(http.call("POST", "/stage1", tokens["E1"], json{{"project", "study"}, {"sentence", "s1"}, {"code", "x"}, {"difficulty", 2}, {"rater", "E2"}}).first == 403);
    CHECK(http.call("POST", "/stage1", "bogus", json{{"project", "study"}, {"sentence", "s1"}, {"code", "x"}, {"difficulty", 2}}).first == 401);
    CHECK(http.call("POST", "/stage1", tokens["E1"], json{{"project", "study"}, {"sentence", "s1"}, {"code", "x"}, {"difficulty", 9}}).first == 400);
    CHECK(http.call("GET", "/projects/nope/tasks", tokens["E1"]).first == 404);

    json freeze{{"model_labels", json::object()}};
    for (std::size_t i = 1; i <= 3; ++i) {
      const auto n = std::to_string(i);
      freeze["model_labels"]["s" + n] = {{"M1", "gold " + n}, {"M2", "model guess " + n}};
    }
    CHECK(http.call("POST", "/projects/study/freeze", tokens["E1"], freeze).first == 403);
    CHECK(http.call("POST", "/projects/study/freeze", "admin-secret", freeze).first == 200);
    CHECK(http.call("POST", "/stage1", tokens["E1"], json{{"project", "study"}, {"sentence", "s1"}, {"code", "x"}, {"difficulty", 2}}).first == 409);

    std::map<std::string, std::vector<std::string>> handles_of;
    for (const auto& r : kRaters) {
      auto [st, tasks] = http.call("GET", "/projects/study/tasks", tokens[r]);
      REQUIRE(st == 200);
      CHECK_FALSE(qc::payload_leaks_provenance(tasks));
      for (const auto& item : tasks["stage2"]) {
        for (const auto& label : item["labels"]) {
          const json rating{{"project", "study"}, {"sentence", item["sentence"]}, {"handle", label["handle"]},
                            {"value", rating_for(label["text"])}};
          CHECK(http.call("POST", "/stage2/ratings", tokens[r], rating).first == 200);
          handles_of[r].push_back(label["handle"]);
        }
      }
    }
    // A handle assigned only to another rater is refused.
    for (const auto& h : handles_of["E1"]) {
      if (std::find(handles_of["E3"].begin(), handles_of["E3"].end(), h) != handles_of["E3"].end()) continue;
      const auto r = http.call("POST", "/stage2/ratings", tokens["E3"], json{{"project", "study"}, {"sentence", "s1"}, {"handle", h}, {"value", 3}});
      CHECK((r.first == 403 || r.first == 404));
      break;
    }
    CHECK(http.call("GET", "/projects/study/tasks?rater=E2", "admin-secret").first == 200);
    CHECK(http.call("GET", "/projects/study/export", "admin-secret").first == 409);
    CHECK(http.call("GET", "/projects/study/export?force=1", "admin-secret").first == 200);
    CHECK(http.call("POST", "/projects/study/close", "admin-secret").first == 200);
    auto [est, exported] = http.call("GET", "/projects/study/export", "admin-secret");
    REQUIRE(est == 200);
    CHECK(exported["completeness"]["complete"] == true);
    const auto ratings = qc::parse_label_ratings(exported["ratings_csv"].get<std::string>());
    CHECK(qc::dgs(ratings, "M1", "s2") == 0.0);
    CHECK(http.call("GET", "/projects/study/export", tokens["E1"]).first == 403);

    auto [bad_status, bad] = http.call("POST", "/projects", "admin-secret", json("not an object"));
    CHECK(bad_status == 400);
    CHECK(bad.contains("error"));
  }

  TEST_CASE("fixture projects from a quote file") {
    const auto s = qc::fixture_project(oracle::data_dir() / "fixtures" / "demo.jsonl", kRaters);
    CHECK(s.id == "demo");
    CHECK(s.sentences.size() == 40);
    CHECK(s.sentences[0].golden.has_value());
  }
}
