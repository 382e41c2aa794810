#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace qc {

enum class ProjectStage { stage1_open, stage2_open, closed };

std::string_view to_string(ProjectStage s);

enum class ProvenanceKind { coder, model, golden };

// Where a label came from. Never leaves the service except in admin exports.
struct Provenance {
  ProvenanceKind kind = ProvenanceKind::coder;
  std::string id;  // rater id, model name, or the golden-standard id

  friend auto operator<=>(const Provenance&, const Provenance&) = default;
};

struct SentenceSpec {
  std::string id;
  std::string text;
  std::optional<std::string> golden;  // may instead be supplied at freeze time
};

struct ProjectSpec {
  std::string id;  // generated when empty
  std::vector<SentenceSpec> sentences;
  std::vector<std::string> raters;
  std::uint64_t seed = 42;
  // Raters do not see labels that only they produced in stage 1.
  bool exclude_own_labels = true;
};

struct CreatedProject {
  std::string id;
  std::map<std::string, std::string> rater_tokens;  // rater -> bearer token (shown once)
  std::size_t pending_stage1 = 0;
};

struct Stage1Submission {
  std::string rater;
  std::string sentence;
  std::string code;
  int difficulty = 1;
  int version = 1;
};

struct LabelHandle {
  std::string handle;  // opaque
  std::string text;
  std::vector<Provenance> provenance;  // server-side only
};

// What a rater is shown for one sentence in stage 2.
struct Stage2Assignment {
  std::string rater;
  std::string sentence;
  std::vector<std::string> handles;  // presentation order
  std::uint64_t seed = 0;
};

struct FreezeInput {
  // sentence -> model name -> label
  std::map<std::string, std::map<std::string, std::string>> model_labels;
  // sentence -> golden code, for sentences created without one
  std::map<std::string, std::string> golden;
};

struct ExportBundle {
  std::string difficulty_csv;  // rater,sentence,level
  std::string stage1_csv;      // rater,sentence,code,difficulty,version
  std::string ratings_csv;     // expert,sentence,source,value
  std::string labels_csv;      // sentence,handle,text,source_kind,source
  nlohmann::json completeness;
};

struct ServiceOptions {
  std::filesystem::path data_dir;  // empty: in memory only
  std::size_t snapshot_every = 100;
  std::string golden_id = "GS";
};

// Event-sourced store for the two-stage protocol. Every mutation is appended
// to <data_dir>/events.jsonl before it is applied; state is rebuilt from the
// latest snapshot plus the events after it. All methods are thread-safe.
class AnnotationService {
 public:
  explicit AnnotationService(ServiceOptions options = {});
  ~AnnotationService();

  CreatedProject create_project(ProjectSpec spec);
  void submit_stage1(const std::string& project, const std::string& rater, const std::string& sentence,
                     const std::string& code, int difficulty);
  std::vector<Stage2Assignment> freeze_and_open_stage2(const std::string& project, const FreezeInput& input);
  void submit_rating(const std::string& project, const std::string& rater, const std::string& sentence,
                     const std::string& handle, int value);
  void close_project(const std::string& project);

  // Rater-facing task list; contains label text and handles only.
  nlohmann::json tasks(const std::string& project, const std::string& rater) const;
  // Provenance resolved. Throws StageError before close unless `force`.
  ExportBundle export_matrices(const std::string& project, bool force = false) const;

  // Rater id for a rater token of `project`; AuthenticationError otherwise.
  std::string rater_for_token(const std::string& project, const std::string& token) const;

  ProjectStage stage(const std::string& project) const;
  std::vector<Stage2Assignment> assignments(const std::string& project) const;
  std::vector<LabelHandle> label_pool(const std::string& project, const std::string& sentence) const;
  std::vector<Stage1Submission> stage1_history(const std::string& project) const;
  // (stage 1 or 2, rater, sentence) for every finished task.
  std::set<std::tuple<int, std::string, std::string>> completed_tasks(const std::string& project) const;

  // Canonical dump of the whole state, for replay checks.
  nlohmann::json state_json() const;
  std::uint64_t last_sequence() const;
  void write_snapshot();

 private:
  struct Project;
  struct State;

  void append_and_apply(nlohmann::json event);
  void apply(const nlohmann::json& event);
  const Project& project_ref(const std::string& id) const;
  Project& project_mut(const std::string& id);

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::unique_ptr<State> state_;
  std::ofstream log_;
};

// Recursively true when a JSON payload has a key naming provenance.
bool payload_leaks_provenance(const nlohmann::json& payload);

}  // namespace qc
