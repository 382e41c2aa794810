#pragma once

#include <filesystem>
#include <string>

#include <httplib.h>

#include "qc/annotation.hpp"

namespace qc {

struct HttpServiceOptions {
  // Bearer token for project creation, freeze, close and export. Empty
  // disables admin routes.
  std::string admin_token;
  // Directory served under /ui (the annotation UI bundle). Optional.
  std::filesystem::path static_dir;
};

// Registers the JSON API on `server`:
//   GET  /health
//   POST /projects                    admin
//   GET  /projects/{id}/tasks?rater=  rater token (or admin)
//   POST /stage1                      rater token
//   POST /stage2/ratings              rater token
//   POST /projects/{id}/freeze        admin
//   POST /projects/{id}/close         admin
//   GET  /projects/{id}/export        admin; ?force=1 before close
// Errors come back as {"error": kind, "message": text} with 400/401/403/404/409.
void mount_annotation_api(httplib::Server& server, AnnotationService& service, const HttpServiceOptions& options);

// Project spec from the POST /projects body.
ProjectSpec parse_project_spec(const nlohmann::json& body);

// Fixture project with one sentence per JSONL record {"id", "quote"[, "code"]}.
// A "code" field becomes the golden standard; otherwise it is given at freeze.
ProjectSpec fixture_project(const std::filesystem::path& jsonl, std::vector<std::string> raters,
                            std::string project_id = "demo");

}  // namespace qc
