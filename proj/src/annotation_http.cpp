#include "qc/annotation_http.hpp"

#include <spdlog/spdlog.h>

#include <sstream>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;

namespace {

int status_for(const Error& e) {
  const std::string& k = e.kind();
  if (k == "authentication") return 401;
  if (k == "authorization") return 403;
  if (k == "not_found") return 404;
  if (k == "conflict" || k == "stage") return 409;
  if (k == "io") return 500;
  return 400;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string bearer(const httplib::Request& req) {
  const std::string h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() > prefix.size() && h.compare(0, prefix.size(), prefix) == 0) {
    return std::string(trim(std::string_view(h).substr(prefix.size())));
  }
  return {};
}

json body_json(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

template <class T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw ValidationError(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + name + "' has the wrong type");
  }
}

// Wraps a handler so library errors become JSON error replies.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      const int status = status_for(e);
      if (status >= 500) spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_json(res, status, {{"error", e.kind()}, {"message", e.what()}});
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

ProjectSpec parse_project_spec(const json& body) {
  ProjectSpec spec;
  if (body.contains("id")) spec.id = field<std::string>(body, "id");
  if (body.contains("seed")) spec.seed = field<std::uint64_t>(body, "seed");
  if (body.contains("exclude_own_labels")) spec.exclude_own_labels = field<bool>(body, "exclude_own_labels");
  spec.raters = field<std::vector<std::string>>(body, "raters");
  const auto sentences = field<json>(body, "sentences");
  if (!sentences.is_array()) throw ValidationError("field 'sentences' must be an array");
  for (const auto& s : sentences) {
    SentenceSpec ss;
    ss.id = field<std::string>(s, "id");
    ss.text = s.contains("text") ? field<std::string>(s, "text") : field<std::string>(s, "quote");
    if (s.contains("golden")) ss.golden = field<std::string>(s, "golden");
    spec.sentences.push_back(std::move(ss));
  }
  return spec;
}

ProjectSpec fixture_project(const std::filesystem::path& jsonl, std::vector<std::string> raters,
                            std::string project_id) {
  ProjectSpec spec;
  spec.id = std::move(project_id);
  spec.raters = std::move(raters);
  std::istringstream in(read_file(jsonl));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line);
    SentenceSpec s{j.at("id").get<std::string>(), j.at("quote").get<std::string>(), std::nullopt};
    if (j.contains("code")) s.golden = j["code"].get<std::string>();
    spec.sentences.push_back(std::move(s));
  }
  return spec;
}

void mount_annotation_api(httplib::Server& server, AnnotationService& service, const HttpServiceOptions& options) {
  const std::string admin = options.admin_token;
  auto is_admin = [admin](const httplib::Request& req) { return !admin.empty() && bearer(req) == admin; };
  auto require_admin = [is_admin](const httplib::Request& req) {
    if (bearer(req).empty()) throw AuthenticationError("missing bearer token");
    if (!is_admin(req)) throw AuthorizationError("this route needs the admin token");
  };
  // Rater acting on `project`; the admin may act for any rater named in `claimed`.
  auto acting_rater = [&service, is_admin](const httplib::Request& req, const std::string& project,
                                           const std::string& claimed) {
    const std::string token = bearer(req);
    if (token.empty()) throw AuthenticationError("missing bearer token");
    if (is_admin(req)) {
      if (claimed.empty()) throw ValidationError("admin requests must name the rater");
      return claimed;
    }
    std::string rater = service.rater_for_token(project, token);
    if (!claimed.empty() && claimed != rater) throw AuthorizationError("token does not belong to rater '" + claimed + "'");
    return rater;
  };

  server.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"status", "ok"}});
             }));

  server.Post("/projects", guarded([&service, require_admin](const httplib::Request& req, httplib::Response& res) {
                require_admin(req);
                const auto created = service.create_project(parse_project_spec(body_json(req)));
                send_json(res, 201, {{"id", created.id},
                                     {"rater_tokens", created.rater_tokens},
                                     {"pending_stage1", created.pending_stage1},
                                     {"stage", "stage1_open"}});
              }));

  server.Get(R"(/projects/([^/]+)/tasks)",
             guarded([&service, acting_rater](const httplib::Request& req, httplib::Response& res) {
               const std::string project = req.matches[1];
               const std::string rater = acting_rater(req, project, req.get_param_value("rater"));
               send_json(res, 200, service.tasks(project, rater));
             }));

  server.Post("/stage1", guarded([&service, acting_rater](const httplib::Request& req, httplib::Response& res) {
                const auto b = body_json(req);
                const auto project = field<std::string>(b, "project");
                const auto rater = acting_rater(req, project, b.value("rater", std::string()));
                const auto sentence = field<std::string>(b, "sentence");
                service.submit_stage1(project, rater, sentence, field<std::string>(b, "code"),
                                      field<int>(b, "difficulty"));
                send_json(res, 200, {{"status", "accepted"}, {"project", project}, {"sentence", sentence}});
              }));

  server.Post("/stage2/ratings", guarded([&service, acting_rater](const httplib::Request& req, httplib::Response& res) {
                const auto b = body_json(req);
                const auto project = field<std::string>(b, "project");
                const auto rater = acting_rater(req, project, b.value("rater", std::string()));
                const auto sentence = field<std::string>(b, "sentence");
                const auto handle = field<std::string>(b, "handle");
                service.submit_rating(project, rater, sentence, handle, field<int>(b, "value"));
                send_json(res, 200,
                          {{"status", "accepted"}, {"project", project}, {"sentence", sentence}, {"handle", handle}});
              }));

  server.Post(R"(/projects/([^/]+)/freeze)",
              guarded([&service, require_admin](const httplib::Request& req, httplib::Response& res) {
                require_admin(req);
                const std::string project = req.matches[1];
                const auto b = body_json(req);
                FreezeInput input;
                if (b.contains("model_labels")) {
                  input.model_labels = field<std::map<std::string, std::map<std::string, std::string>>>(b, "model_labels");
                }
                if (b.contains("golden")) input.golden = field<std::map<std::string, std::string>>(b, "golden");
                const auto assignments = service.freeze_and_open_stage2(project, input);
                json out = json::array();
                for (const auto& a : assignments) {
                  out.push_back({{"rater", a.rater}, {"sentence", a.sentence}, {"handles", a.handles}, {"seed", a.seed}});
                }
                send_json(res, 200, {{"stage", "stage2_open"}, {"assignments", out}});
              }));

  server.Post(R"(/projects/([^/]+)/close)",
              guarded([&service, require_admin](const httplib::Request& req, httplib::Response& res) {
                require_admin(req);
                service.close_project(req.matches[1]);
                send_json(res, 200, {{"stage", "closed"}});
              }));

  server.Get(R"(/projects/([^/]+)/export)",
             guarded([&service, require_admin](const httplib::Request& req, httplib::Response& res) {
               require_admin(req);
               const std::string force = req.get_param_value("force");
               const auto bundle = service.export_matrices(req.matches[1], force == "1" || force == "true");
               send_json(res, 200, {{"difficulty_csv", bundle.difficulty_csv},
                                    {"stage1_csv", bundle.stage1_csv},
                                    {"ratings_csv", bundle.ratings_csv},
                                    {"labels_csv", bundle.labels_csv},
                                    {"completeness", bundle.completeness}});
             }));

  if (!options.static_dir.empty()) {
    if (!server.set_mount_point("/ui", options.static_dir.string())) {
      throw ConfigError("static directory '" + options.static_dir.string() + "' does not exist");
    }
  }
}

}  // namespace qc
