#include "qc/annotation.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <random>
#include <sstream>

#include "qc/agreement.hpp"
#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(ProjectStage s) {
  switch (s) {
    case ProjectStage::stage1_open:
      return "stage1_open";
    case ProjectStage::stage2_open:
      return "stage2_open";
    case ProjectStage::closed:
      return "closed";
  }
  return "?";
}

namespace {

ProjectStage parse_stage(std::string_view s) {
  if (s == "stage1_open") return ProjectStage::stage1_open;
  if (s == "stage2_open") return ProjectStage::stage2_open;
  if (s == "closed") return ProjectStage::closed;
  throw SchemaError("unknown project stage '" + std::string(s) + "'");
}

std::string_view kind_name(ProvenanceKind k) {
  switch (k) {
    case ProvenanceKind::coder:
      return "coder";
    case ProvenanceKind::model:
      return "model";
    case ProvenanceKind::golden:
      return "golden";
  }
  return "?";
}

ProvenanceKind parse_kind(std::string_view s) {
  if (s == "coder") return ProvenanceKind::coder;
  if (s == "model") return ProvenanceKind::model;
  if (s == "golden") return ProvenanceKind::golden;
  throw SchemaError("unknown provenance kind '" + std::string(s) + "'");
}

std::string random_hex(std::size_t bytes) {
  static thread_local std::random_device rd;
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const unsigned v = rd() & 0xffu;
    out.push_back(digits[v >> 4]);
    out.push_back(digits[v & 0xf]);
  }
  return out;
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

using Key2 = std::pair<std::string, std::string>;

}  // namespace

// ---------------------------------------------------------------------------
// State

struct AnnotationService::Project {
  std::string id;
  std::vector<SentenceSpec> sentences;
  std::vector<std::string> raters;
  std::map<std::string, std::string> token_hashes;  // sha256(token) -> rater
  std::uint64_t seed = 0;
  bool exclude_own = true;
  ProjectStage stage = ProjectStage::stage1_open;
  std::map<std::string, std::string> golden;                // sentence -> code
  std::map<Key2, std::vector<Stage1Submission>> stage1;     // (rater, sentence) -> versions
  std::map<std::string, std::vector<LabelHandle>> pools;    // sentence -> handles (sorted)
  std::map<Key2, Stage2Assignment> assignments;             // (rater, sentence)
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<int>> ratings;  // history

  const SentenceSpec* sentence(const std::string& sid) const {
    for (const auto& s : sentences) {
      if (s.id == sid) return &s;
    }
    return nullptr;
  }
  bool has_rater(const std::string& r) const { return std::find(raters.begin(), raters.end(), r) != raters.end(); }

  json to_json() const {
    json sj = json::array();
    for (const auto& s : sentences) {
      json e{{"id", s.id}, {"text", s.text}};
      if (s.golden) e["golden"] = *s.golden;
      sj.push_back(e);
    }
    json s1 = json::array();
    for (const auto& [key, versions] : stage1) {
      for (const auto& v : versions) {
        s1.push_back({{"rater", v.rater}, {"sentence", v.sentence}, {"code", v.code},
                      {"difficulty", v.difficulty}, {"version", v.version}});
      }
    }
    json pj = json::object();
    for (const auto& [sid, handles] : pools) {
      json hs = json::array();
      for (const auto& h : handles) {
        json prov = json::array();
        for (const auto& p : h.provenance) prov.push_back({{"kind", kind_name(p.kind)}, {"id", p.id}});
        hs.push_back({{"handle", h.handle}, {"text", h.text}, {"provenance", prov}});
      }
      pj[sid] = hs;
    }
    json aj = json::array();
    for (const auto& [key, a] : assignments) {
      aj.push_back({{"rater", a.rater}, {"sentence", a.sentence}, {"handles", a.handles}, {"seed", a.seed}});
    }
    json rj = json::array();
    for (const auto& [key, values] : ratings) {
      rj.push_back({{"rater", std::get<0>(key)}, {"sentence", std::get<1>(key)}, {"handle", std::get<2>(key)},
                    {"values", values}});
    }
    return {{"id", id},
            {"sentences", sj},
            {"raters", raters},
            {"token_hashes", token_hashes},
            {"seed", seed},
            {"exclude_own_labels", exclude_own},
            {"stage", to_string(stage)},
            {"golden", golden},
            {"stage1", s1},
            {"pools", pj},
            {"assignments", aj},
            {"ratings", rj}};
  }

  static Project from_json(const json& j) {
    Project p;
    p.id = j.at("id").get<std::string>();
    for (const auto& s : j.at("sentences")) {
      SentenceSpec spec{s.at("id").get<std::string>(), s.at("text").get<std::string>(), std::nullopt};
      if (s.contains("golden")) spec.golden = s["golden"].get<std::string>();
      p.sentences.push_back(std::move(spec));
    }
    p.raters = j.at("raters").get<std::vector<std::string>>();
    p.token_hashes = j.at("token_hashes").get<std::map<std::string, std::string>>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.exclude_own = j.at("exclude_own_labels").get<bool>();
    p.stage = parse_stage(j.at("stage").get<std::string>());
    p.golden = j.at("golden").get<std::map<std::string, std::string>>();
    for (const auto& v : j.at("stage1")) {
      Stage1Submission s{v.at("rater").get<std::string>(), v.at("sentence").get<std::string>(),
                         v.at("code").get<std::string>(), v.at("difficulty").get<int>(), v.at("version").get<int>()};
      p.stage1[{s.rater, s.sentence}].push_back(std::move(s));
    }
    for (const auto& [sid, hs] : j.at("pools").items()) {
      auto& pool = p.pools[sid];
      for (const auto& h : hs) {
        LabelHandle lh{h.at("handle").get<std::string>(), h.at("text").get<std::string>(), {}};
        for (const auto& pr : h.at("provenance")) {
          lh.provenance.push_back({parse_kind(pr.at("kind").get<std::string>()), pr.at("id").get<std::string>()});
        }
        pool.push_back(std::move(lh));
      }
    }
    for (const auto& a : j.at("assignments")) {
      Stage2Assignment s{a.at("rater").get<std::string>(), a.at("sentence").get<std::string>(),
                         a.at("handles").get<std::vector<std::string>>(), a.at("seed").get<std::uint64_t>()};
      p.assignments[{s.rater, s.sentence}] = std::move(s);
    }
    for (const auto& r : j.at("ratings")) {
      p.ratings[{r.at("rater").get<std::string>(), r.at("sentence").get<std::string>(),
                 r.at("handle").get<std::string>()}] = r.at("values").get<std::vector<int>>();
    }
    return p;
  }
};

struct AnnotationService::State {
  std::map<std::string, Project> projects;
  std::uint64_t seq = 0;
  std::uint64_t events_since_snapshot = 0;
};

// ---------------------------------------------------------------------------

AnnotationService::AnnotationService(ServiceOptions options)
    : options_(std::move(options)), state_(std::make_unique<State>()) {
  if (options_.data_dir.empty()) return;
  fs::create_directories(options_.data_dir);
  const auto snapshot = options_.data_dir / "snapshot.json";
  if (fs::exists(snapshot)) {
    const auto j = json::parse(read_file(snapshot));
    state_->seq = j.at("seq").get<std::uint64_t>();
    for (const auto& p : j.at("projects")) {
      auto project = Project::from_json(p);
      state_->projects.emplace(project.id, std::move(project));
    }
  }
  const auto events = options_.data_dir / "events.jsonl";
  if (fs::exists(events)) {
    std::istringstream in(read_file(events));
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      json e;
      try {
        e = json::parse(line);
      } catch (const json::exception&) {
        // Only a torn final line can be unreadable; it was never acknowledged.
        break;
      }
      if (e.at("seq").get<std::uint64_t>() <= state_->seq) continue;
      apply(e);
      state_->seq = e.at("seq").get<std::uint64_t>();
      ++state_->events_since_snapshot;
    }
  }
  log_.open(events, std::ios::app | std::ios::binary);
  if (!log_) throw IoError("cannot open event log " + events.string());
}

AnnotationService::~AnnotationService() = default;

const AnnotationService::Project& AnnotationService::project_ref(const std::string& id) const {
  auto it = state_->projects.find(id);
  if (it == state_->projects.end()) throw NotFoundError("unknown project '" + id + "'");
  return it->second;
}

AnnotationService::Project& AnnotationService::project_mut(const std::string& id) {
  auto it = state_->projects.find(id);
  if (it == state_->projects.end()) throw NotFoundError("unknown project '" + id + "'");
  return it->second;
}

void AnnotationService::append_and_apply(json event) {
  event["seq"] = state_->seq + 1;
  event["at"] = now_utc();
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("failed to append to the event log");
  }
  apply(event);
  state_->seq = event["seq"].get<std::uint64_t>();
  if (!options_.data_dir.empty() && ++state_->events_since_snapshot >= options_.snapshot_every) {
    json projects = json::array();
    for (const auto& [_, p] : state_->projects) projects.push_back(p.to_json());
    write_file_atomic(options_.data_dir / "snapshot.json",
                      json{{"seq", state_->seq}, {"projects", projects}}.dump() + "\n");
    state_->events_since_snapshot = 0;
  }
}

void AnnotationService::apply(const json& e) {
  const std::string type = e.at("type").get<std::string>();
  if (type == "project_created") {
    Project p;
    p.id = e.at("project").get<std::string>();
    for (const auto& s : e.at("sentences")) {
      SentenceSpec spec{s.at("id").get<std::string>(), s.at("text").get<std::string>(), std::nullopt};
      if (s.contains("golden")) {
        spec.golden = s["golden"].get<std::string>();
        p.golden[spec.id] = *spec.golden;
      }
      p.sentences.push_back(std::move(spec));
    }
    p.raters = e.at("raters").get<std::vector<std::string>>();
    p.token_hashes = e.at("token_hashes").get<std::map<std::string, std::string>>();
    p.seed = e.at("seed").get<std::uint64_t>();
    p.exclude_own = e.at("exclude_own_labels").get<bool>();
    state_->projects.emplace(p.id, std::move(p));
    return;
  }
  Project& p = project_mut(e.at("project").get<std::string>());
  if (type == "stage1_submitted") {
    const std::string rater = e.at("rater"), sentence = e.at("sentence");
    auto& versions = p.stage1[{rater, sentence}];
    versions.push_back({rater, sentence, e.at("code").get<std::string>(), e.at("difficulty").get<int>(),
                        static_cast<int>(versions.size()) + 1});
  } else if (type == "stage2_opened") {
    for (const auto& [sid, code] : e.at("golden").items()) p.golden[sid] = code.get<std::string>();
    const auto model_labels = e.at("model_labels");
    for (const auto& s : p.sentences) {
      std::map<std::string, std::vector<Provenance>> by_text;
      for (const auto& rater : p.raters) {
        by_text[std::string(trim(p.stage1.at({rater, s.id}).back().code))].push_back({ProvenanceKind::coder, rater});
      }
      for (const auto& [model, label] : model_labels.at(s.id).items()) {
        by_text[std::string(trim(label.get<std::string>()))].push_back({ProvenanceKind::model, model});
      }
      by_text[std::string(trim(p.golden.at(s.id)))].push_back({ProvenanceKind::golden, options_.golden_id});
      std::vector<LabelHandle> pool;
      for (auto& [text, prov] : by_text) {
        std::sort(prov.begin(), prov.end());
        const std::string digest =
            sha256_hex(std::to_string(p.seed) + "\x1f" + p.id + "\x1f" + s.id + "\x1f" + text);
        pool.push_back({"h" + digest.substr(0, 12), text, prov});
      }
      std::sort(pool.begin(), pool.end(), [](const LabelHandle& a, const LabelHandle& b) { return a.handle < b.handle; });
      for (const auto& rater : p.raters) {
        Stage2Assignment a;
        a.rater = rater;
        a.sentence = s.id;
        for (const auto& h : pool) {
          const bool only_own = std::all_of(h.provenance.begin(), h.provenance.end(), [&](const Provenance& pr) {
            return pr.kind == ProvenanceKind::coder && pr.id == rater;
          });
          if (p.exclude_own && only_own) continue;
          a.handles.push_back(h.handle);
        }
        a.seed = fnv1a64(p.id + "\x1f" + rater + "\x1f" + s.id, 0xcbf29ce484222325ULL ^ p.seed);
        std::mt19937_64 rng(a.seed);
        seeded_shuffle(std::span<std::string>(a.handles), rng);
        p.assignments[{rater, s.id}] = std::move(a);
      }
      p.pools[s.id] = std::move(pool);
    }
    p.stage = ProjectStage::stage2_open;
  } else if (type == "rating_submitted") {
    p.ratings[{e.at("rater").get<std::string>(), e.at("sentence").get<std::string>(), e.at("handle").get<std::string>()}]
        .push_back(e.at("value").get<int>());
  } else if (type == "project_closed") {
    p.stage = ProjectStage::closed;
  } else {
    throw SchemaError("unknown event type '" + type + "'");
  }
}

// ---------------------------------------------------------------------------
// Commands

CreatedProject AnnotationService::create_project(ProjectSpec spec) {
  if (spec.sentences.empty()) throw ValidationError("a project needs at least one sentence");
  if (spec.raters.empty()) throw ValidationError("a project needs at least one rater");
  std::set<std::string> ids, raters;
  for (const auto& s : spec.sentences) {
    if (trim(s.id).empty()) throw ValidationError("sentence id is empty");
    if (trim(s.text).empty()) throw ValidationError("sentence '" + s.id + "' has no text");
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sentence id '" + s.id + "'");
    if (s.golden && trim(*s.golden).empty()) throw ValidationError("sentence '" + s.id + "' has an empty golden code");
  }
  for (const auto& r : spec.raters) {
    if (trim(r).empty()) throw ValidationError("rater id is empty");
    if (r == options_.golden_id) throw ValidationError("rater id '" + r + "' is reserved for the golden standard");
    if (!raters.insert(r).second) throw ValidationError("duplicate rater '" + r + "'");
  }

  std::unique_lock lock(mutex_);
  if (spec.id.empty()) {
    do {
      spec.id = "p" + random_hex(6);
    } while (state_->projects.count(spec.id));
  }
  if (state_->projects.count(spec.id)) throw ConflictError("project '" + spec.id + "' already exists");

  CreatedProject out;
  out.id = spec.id;
  json token_hashes = json::object();
  for (const auto& r : spec.raters) {
    const std::string token = random_hex(16);
    out.rater_tokens[r] = token;
    token_hashes[sha256_hex(token)] = r;
  }
  json sentences = json::array();
  for (const auto& s : spec.sentences) {
    json e{{"id", s.id}, {"text", s.text}};
    if (s.golden) e["golden"] = *s.golden;
    sentences.push_back(e);
  }
  append_and_apply({{"type", "project_created"},
                    {"project", spec.id},
                    {"sentences", sentences},
                    {"raters", spec.raters},
                    {"token_hashes", token_hashes},
                    {"seed", spec.seed},
                    {"exclude_own_labels", spec.exclude_own_labels}});
  out.pending_stage1 = spec.sentences.size() * spec.raters.size();
  return out;
}

void AnnotationService::submit_stage1(const std::string& project, const std::string& rater,
                                      const std::string& sentence, const std::string& code, int difficulty) {
  std::unique_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (p.stage != ProjectStage::stage1_open) {
    throw StageError("project '" + project + "' is " + std::string(to_string(p.stage)) + "; stage 1 is closed");
  }
  if (!p.has_rater(rater)) throw NotFoundError("rater '" + rater + "' is not assigned to project '" + project + "'");
  if (!p.sentence(sentence)) throw NotFoundError("unknown sentence '" + sentence + "'");
  if (trim(code).empty()) throw ValidationError("code is empty");
  if (difficulty < 1 || difficulty > 3) {
    throw ValidationError("difficulty " + std::to_string(difficulty) + " is outside 1..3");
  }
  append_and_apply({{"type", "stage1_submitted"},
                    {"project", project},
                    {"rater", rater},
                    {"sentence", sentence},
                    {"code", std::string(trim(code))},
                    {"difficulty", difficulty}});
}

std::vector<Stage2Assignment> AnnotationService::freeze_and_open_stage2(const std::string& project,
                                                                        const FreezeInput& input) {
  std::unique_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (p.stage != ProjectStage::stage1_open) {
    throw StageError("project '" + project + "' is " + std::string(to_string(p.stage)) + "; it cannot be frozen");
  }
  std::vector<std::string> missing;
  for (const auto& s : p.sentences) {
    for (const auto& r : p.raters) {
      if (!p.stage1.count({r, s.id})) missing.push_back(r + "/" + s.id);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    throw ValidationError(std::to_string(missing.size()) + " stage-1 submissions missing: " + list);
  }
  json golden = json::object();
  for (const auto& [sid, code] : input.golden) {
    if (!p.sentence(sid)) throw NotFoundError("golden code for unknown sentence '" + sid + "'");
    if (trim(code).empty()) throw ValidationError("golden code for '" + sid + "' is empty");
    golden[sid] = std::string(trim(code));
  }
  json model_labels = json::object();
  for (const auto& s : p.sentences) {
    if (!p.golden.count(s.id) && !golden.contains(s.id)) {
      throw ValidationError("sentence '" + s.id + "' has no golden-standard code");
    }
    auto it = input.model_labels.find(s.id);
    if (it == input.model_labels.end() || it->second.empty()) {
      throw ValidationError("no model labels supplied for sentence '" + s.id + "'");
    }
    json labels = json::object();
    for (const auto& [model, label] : it->second) {
      if (trim(model).empty()) throw ValidationError("empty model name for sentence '" + s.id + "'");
      if (model == options_.golden_id || p.has_rater(model)) {
        throw ValidationError("model name '" + model + "' clashes with a rater or the golden-standard id");
      }
      if (trim(label).empty()) throw ValidationError("model '" + model + "' has an empty label for '" + s.id + "'");
      labels[model] = label;
    }
    model_labels[s.id] = labels;
  }
  for (const auto& [sid, _] : input.model_labels) {
    if (!p.sentence(sid)) throw NotFoundError("model labels for unknown sentence '" + sid + "'");
  }
  append_and_apply({{"type", "stage2_opened"}, {"project", project}, {"model_labels", model_labels}, {"golden", golden}});
  std::vector<Stage2Assignment> out;
  for (const auto& [_, a] : project_ref(project).assignments) out.push_back(a);
  return out;
}

void AnnotationService::submit_rating(const std::string& project, const std::string& rater,
                                      const std::string& sentence, const std::string& handle, int value) {
  std::unique_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (p.stage != ProjectStage::stage2_open) {
    throw StageError("project '" + project + "' is " + std::string(to_string(p.stage)) + "; ratings are not open");
  }
  if (value < 1 || value > 5) throw ValidationError("rating " + std::to_string(value) + " is outside 1..5");
  if (!p.has_rater(rater)) throw NotFoundError("rater '" + rater + "' is not assigned to project '" + project + "'");
  if (!p.sentence(sentence)) throw NotFoundError("unknown sentence '" + sentence + "'");
  const auto& mine = p.assignments.at({rater, sentence}).handles;
  if (std::find(mine.begin(), mine.end(), handle) == mine.end()) {
    for (const auto& [key, a] : p.assignments) {
      if (std::find(a.handles.begin(), a.handles.end(), handle) != a.handles.end()) {
        throw AuthorizationError("handle '" + handle + "' is not part of this rater's assignment for '" + sentence + "'");
      }
    }
    throw NotFoundError("unknown label handle '" + handle + "'");
  }
  append_and_apply({{"type", "rating_submitted"},
                    {"project", project},
                    {"rater", rater},
                    {"sentence", sentence},
                    {"handle", handle},
                    {"value", value}});
}

void AnnotationService::close_project(const std::string& project) {
  std::unique_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (p.stage != ProjectStage::stage2_open) {
    throw StageError("project '" + project + "' is " + std::string(to_string(p.stage)) + "; only stage 2 can be closed");
  }
  append_and_apply({{"type", "project_closed"}, {"project", project}});
}

// ---------------------------------------------------------------------------
// Queries

json AnnotationService::tasks(const std::string& project, const std::string& rater) const {
  std::shared_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (!p.has_rater(rater)) throw NotFoundError("rater '" + rater + "' is not assigned to project '" + project + "'");
  json stage1 = json::array();
  std::size_t s1_done = 0, s2_done = 0, s2_total = 0;
  for (const auto& s : p.sentences) {
    json t{{"sentence", s.id}, {"text", s.text}, {"submitted", false}};
    if (auto it = p.stage1.find({rater, s.id}); it != p.stage1.end()) {
      t["submitted"] = true;
      t["code"] = it->second.back().code;
      t["difficulty"] = it->second.back().difficulty;
      ++s1_done;
    }
    stage1.push_back(t);
  }
  json stage2 = json::array();
  if (p.stage != ProjectStage::stage1_open) {
    for (const auto& s : p.sentences) {
      const auto& a = p.assignments.at({rater, s.id});
      json labels = json::array();
      std::size_t rated = 0;
      for (const auto& h : a.handles) {
        const auto& pool = p.pools.at(s.id);
        auto lh = std::find_if(pool.begin(), pool.end(), [&](const LabelHandle& x) { return x.handle == h; });
        json card{{"handle", h}, {"text", lh->text}};
        if (auto r = p.ratings.find({rater, s.id, h}); r != p.ratings.end()) {
          card["rating"] = r->second.back();
          ++rated;
        }
        labels.push_back(card);
      }
      const bool complete = rated == a.handles.size();
      s2_done += complete ? 1 : 0;
      ++s2_total;
      stage2.push_back({{"sentence", s.id}, {"text", s.text}, {"labels", labels}, {"complete", complete}});
    }
  }
  return {{"project", p.id},
          {"rater", rater},
          {"stage", to_string(p.stage)},
          {"stage1", stage1},
          {"stage2", stage2},
          {"progress",
           {{"stage1_done", s1_done},
            {"stage1_total", p.sentences.size()},
            {"stage2_done", s2_done},
            {"stage2_total", s2_total}}}};
}

ExportBundle AnnotationService::export_matrices(const std::string& project, bool force) const {
  std::shared_lock lock(mutex_);
  const Project& p = project_ref(project);
  if (p.stage != ProjectStage::closed && !force) {
    throw StageError("project '" + project + "' is not closed; pass force to export anyway");
  }
  ExportBundle out;
  std::vector<DifficultyRating> difficulty;
  std::string stage1 = format_csv_row(std::vector<std::string>{"rater", "sentence", "code", "difficulty", "version"});
  json missing_stage1 = json::array();
  for (const auto& s : p.sentences) {
    for (const auto& r : p.raters) {
      auto it = p.stage1.find({r, s.id});
      if (it == p.stage1.end()) {
        missing_stage1.push_back(r + "/" + s.id);
        continue;
      }
      const auto& v = it->second.back();
      difficulty.push_back({r, s.id, v.difficulty});
      stage1 += format_csv_row(std::vector<std::string>{r, s.id, v.code, std::to_string(v.difficulty),
                                                        std::to_string(v.version)});
    }
  }
  out.difficulty_csv = format_difficulty_ratings(difficulty);
  out.stage1_csv = std::move(stage1);

  std::vector<LabelRating> ratings;
  std::string labels = format_csv_row(std::vector<std::string>{"sentence", "handle", "text", "source_kind", "source"});
  std::size_t expected = 0, given = 0;
  for (const auto& s : p.sentences) {
    auto pool_it = p.pools.find(s.id);
    if (pool_it == p.pools.end()) continue;
    for (const auto& h : pool_it->second) {
      for (const auto& pr : h.provenance) {
        labels += format_csv_row(std::vector<std::string>{s.id, h.handle, h.text, std::string(kind_name(pr.kind)), pr.id});
      }
    }
    for (const auto& r : p.raters) {
      const auto& a = p.assignments.at({r, s.id});
      for (const auto& handle : a.handles) {
        ++expected;
        auto rit = p.ratings.find({r, s.id, handle});
        if (rit == p.ratings.end()) continue;
        ++given;
        const auto& h = *std::find_if(pool_it->second.begin(), pool_it->second.end(),
                                      [&](const LabelHandle& x) { return x.handle == handle; });
        for (const auto& pr : h.provenance) ratings.push_back({r, s.id, pr.id, rit->second.back()});
      }
    }
  }
  out.ratings_csv = format_label_ratings(ratings);
  out.labels_csv = std::move(labels);
  out.completeness = {{"stage", to_string(p.stage)},
                      {"missing_stage1", missing_stage1},
                      {"ratings_expected", expected},
                      {"ratings_given", given},
                      {"complete", missing_stage1.empty() && p.stage != ProjectStage::stage1_open && expected == given}};
  return out;
}

std::string AnnotationService::rater_for_token(const std::string& project, const std::string& token) const {
  std::shared_lock lock(mutex_);
  const Project& p = project_ref(project);
  auto it = p.token_hashes.find(sha256_hex(token));
  if (token.empty() || it == p.token_hashes.end()) {
    throw AuthenticationError("invalid rater token for project '" + project + "'");
  }
  return it->second;
}

ProjectStage AnnotationService::stage(const std::string& project) const {
  std::shared_lock lock(mutex_);
  return project_ref(project).stage;
}

std::vector<Stage2Assignment> AnnotationService::assignments(const std::string& project) const {
  std::shared_lock lock(mutex_);
  std::vector<Stage2Assignment> out;
  for (const auto& [_, a] : project_ref(project).assignments) out.push_back(a);
  return out;
}

std::vector<LabelHandle> AnnotationService::label_pool(const std::string& project, const std::string& sentence) const {
  std::shared_lock lock(mutex_);
  const Project& p = project_ref(project);
  auto it = p.pools.find(sentence);
  if (it == p.pools.end()) throw NotFoundError("no label pool for sentence '" + sentence + "'");
  return it->second;
}

std::vector<Stage1Submission> AnnotationService::stage1_history(const std::string& project) const {
  std::shared_lock lock(mutex_);
  std::vector<Stage1Submission> out;
  for (const auto& [_, versions] : project_ref(project).stage1) out.insert(out.end(), versions.begin(), versions.end());
  return out;
}

std::set<std::tuple<int, std::string, std::string>> AnnotationService::completed_tasks(const std::string& project) const {
  std::shared_lock lock(mutex_);
  const Project& p = project_ref(project);
  std::set<std::tuple<int, std::string, std::string>> out;
  for (const auto& [key, _] : p.stage1) out.insert({1, key.first, key.second});
  for (const auto& [key, a] : p.assignments) {
    const bool done = std::all_of(a.handles.begin(), a.handles.end(), [&](const std::string& h) {
      return p.ratings.count({key.first, key.second, h}) > 0;
    });
    if (done) out.insert({2, key.first, key.second});
  }
  return out;
}

json AnnotationService::state_json() const {
  std::shared_lock lock(mutex_);
  json projects = json::array();
  for (const auto& [_, p] : state_->projects) projects.push_back(p.to_json());
  return {{"seq", state_->seq}, {"projects", projects}};
}

std::uint64_t AnnotationService::last_sequence() const {
  std::shared_lock lock(mutex_);
  return state_->seq;
}

void AnnotationService::write_snapshot() {
  std::unique_lock lock(mutex_);
  if (options_.data_dir.empty()) return;
  json projects = json::array();
  for (const auto& [_, p] : state_->projects) projects.push_back(p.to_json());
  write_file_atomic(options_.data_dir / "snapshot.json", json{{"seq", state_->seq}, {"projects", projects}}.dump() + "\n");
  state_->events_since_snapshot = 0;
}

bool payload_leaks_provenance(const json& payload) {
  static const std::set<std::string> forbidden{"provenance", "source", "sources", "source_kind", "kind",
                                               "origin",     "coder",  "model",   "models",      "golden",
                                               "golden_standard"};
  if (payload.is_object()) {
    for (const auto& [key, value] : payload.items()) {
      if (forbidden.count(to_lower_ascii(key))) return true;
      if (payload_leaks_provenance(value)) return true;
    }
  } else if (payload.is_array()) {
    for (const auto& v : payload) {
      if (payload_leaks_provenance(v)) return true;
    }
  }
  return false;
}

}  // namespace qc
