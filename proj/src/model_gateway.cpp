#include "qc/model_gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing '/'
};

ParsedUrl parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("malformed URL '" + url + "': missing scheme");
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("unsupported URL scheme '" + scheme + "' in '" + url + "'");
  }
  auto host_start = scheme_end + 3;
  auto path_start = url.find('/', host_start);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  if (out.origin.size() == host_start) throw ConfigError("malformed URL '" + url + "': missing host");
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

httplib::Headers auth_headers(const std::optional<std::string>& token) {
  httplib::Headers h;
  if (token) h.emplace("Authorization", "Bearer " + *token);
  return h;
}

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto existing = spdlog::get("qc");
    return existing ? existing : spdlog::default_logger();
  }();
  return log;
}

std::string env_or_empty(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace

// ---------------------------------------------------------------------------

void GenerationParams::validate() const {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
  if (!(top_p >= 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in [0, 1]");
  if (n_sequences < 1) throw ConfigError("n_sequences must be >= 1");
}

json GenerationParams::to_json() const {
  return json{{"max_new_tokens", max_new_tokens},
              {"temperature", temperature},
              {"top_p", top_p},
              {"n_sequences", n_sequences}};
}

GenerationParams GenerationParams::from_json(const json& j) {
  GenerationParams p;
  p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.n_sequences = j.value("n_sequences", p.n_sequences);
  p.validate();
  return p;
}

std::string ModelEndpoint::auth_env_var() const {
  if (!auth_env.empty()) return auth_env;
  std::string var = "QC_AUTH_";
  for (unsigned char c : name) var.push_back(std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_');
  return var;
}

std::optional<std::string> ModelEndpoint::auth_token() const {
  auto v = env_or_empty(auth_env_var());
  if (v.empty()) return std::nullopt;
  return v;
}

bool ModelEndpoint::is_stub() const { return base_url.rfind("stub://", 0) == 0; }

void ModelEndpoint::validate() const {
  if (trim(name).empty()) throw ConfigError("endpoint name is empty");
  if (trim(model_id).empty()) throw ConfigError("endpoint '" + name + "' has no model_id");
  if (!is_stub()) parse_url(base_url);
  params.validate();
}

std::string cache_key(std::string_view model_id, std::string_view prompt,
                      const GenerationParams& params) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  json j{{"model_id", model_id}, {"prompt", prompt}, {"params", params.to_json()}};
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (dir_.empty()) return std::nullopt;
  const auto path = dir_ / (key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto record = json::parse(read_file(path));
  return record.at("raw").get<std::string>();
}

void ResponseCache::put(const std::string& key, const json& request, const std::string& raw) {
  std::lock_guard lock(mutex_);
  if (memory_.count(key)) return;
  memory_.emplace(key, raw);
  if (dir_.empty()) return;
  const auto path = dir_ / (key + ".json");
  if (std::filesystem::exists(path)) return;
  json record{{"cache_key", key}, {"request", request}, {"raw", raw}};
  write_file_atomic(path, record.dump(2) + "\n");
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  if (dir_.empty()) return memory_.size();
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    n += entry.path().extension() == ".json" ? 1 : 0;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Clients

HttpChatClient::HttpChatClient(RetryPolicy retry, std::chrono::seconds timeout)
    : retry_(retry), timeout_(timeout) {}

std::string HttpChatClient::complete(const ModelEndpoint& endpoint, const std::string& prompt) {
  const auto url = parse_url(endpoint.base_url);
  const std::string path = url.prefix + "/chat/completions";
  const auto& p = endpoint.params;
  const json body{{"model", endpoint.model_id},
                  {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", p.temperature},
                  {"top_p", p.top_p},
                  {"max_tokens", p.max_new_tokens},
                  {"n", p.n_sequences}};
  const auto token = endpoint.auth_token();
  const std::string payload = body.dump();
  logger()->debug("POST {}{} [{}] auth={} body={}", url.origin, path, endpoint.name,
                  token ? "Bearer ***" : "none", payload);

  httplib::Client client(url.origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  auto backoff = retry_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
    }
    auto res = client.Post(path, auth_headers(token), payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      logger()->warn("endpoint '{}' attempt {}: transport error: {}", endpoint.name, attempt + 1,
                     last_error);
      continue;
    }
    logger()->debug("reply [{}] status={} body={}", endpoint.name, res->status, res->body);
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      logger()->warn("endpoint '{}' attempt {}: {}", endpoint.name, attempt + 1, last_error);
      if (attempt == retry_.max_retries) {
        throw HttpStatusError(res->status, res->body,
                              "endpoint '" + endpoint.name + "' returned HTTP " +
                                  std::to_string(res->status) + " after " +
                                  std::to_string(attempt + 1) + " attempts: " + res->body);
      }
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw HttpStatusError(res->status, res->body,
                            "endpoint '" + endpoint.name + "' returned HTTP " +
                                std::to_string(res->status) + ": " + res->body);
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception& e) {
      throw ContractError("endpoint '" + endpoint.name + "' returned invalid JSON: " + e.what());
    }
    const json* content = nullptr;
    if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
      const auto& choice = reply["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content")) {
        content = &choice["message"]["content"];
      } else if (choice.contains("text")) {
        content = &choice["text"];
      }
    }
    if (content == nullptr) {
      throw ContractError("endpoint '" + endpoint.name + "' reply has no choices[0].message.content");
    }
    std::string text = content->is_string() ? content->get<std::string>() : std::string();
    if (trim(text).empty()) {
      throw EmptyGenerationError("endpoint '" + endpoint.name + "' returned an empty completion");
    }
    return text;
  }
  throw TransportError("endpoint '" + endpoint.name + "' (" + endpoint.base_url + ") unreachable after " +
                       std::to_string(retry_.max_retries + 1) + " attempts: " + last_error);
}

StubChatClient::StubChatClient(std::map<std::string, std::string> quote_to_code)
    : quote_to_code_(std::move(quote_to_code)) {}

std::string target_quote(std::string_view prompt) {
  constexpr std::string_view open = "Sentence: ";
  constexpr std::string_view close = "\nCode:";
  auto start = prompt.rfind(open);
  if (start == std::string_view::npos) return {};
  start += open.size();
  auto end = prompt.size() >= close.size() ? prompt.size() - close.size() : std::string_view::npos;
  if (end == std::string_view::npos || end < start || prompt.substr(end) != close) return {};
  return std::string(prompt.substr(start, end - start));
}

std::string StubChatClient::complete(const ModelEndpoint& endpoint, const std::string& prompt) {
  const std::string kind = endpoint.base_url.substr(std::string_view("stub://").size());
  if (kind == "fail") {
    throw TransportError("endpoint '" + endpoint.name + "' (stub://fail) is unreachable");
  }
  if (kind != "echo") throw ConfigError("unknown stub endpoint '" + endpoint.base_url + "'");
  auto it = quote_to_code_.find(target_quote(prompt));
  if (it != quote_to_code_.end()) return it->second;
  // Quotes that themselves contain "Sentence: " defeat target_quote.
  for (const auto& [quote, code] : quote_to_code_) {
    const std::string tail = "Sentence: " + quote + "\nCode:";
    if (prompt.size() >= tail.size() && prompt.compare(prompt.size() - tail.size(), tail.size(), tail) == 0) {
      return code;
    }
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(ResponseCache& cache, int max_in_flight)
    : cache_(cache), slots_(std::max(1, max_in_flight)) {}

GeneratedCode Gateway::generate(const ModelEndpoint& endpoint, ChatClient& client,
                                const RenderedPrompt& prompt, std::string pair_id, int k) {
  GeneratedCode out;
  out.pair_id = std::move(pair_id);
  out.endpoint = endpoint.name;
  out.template_id = prompt.template_id + "." + std::string(to_string(prompt.terminator));
  out.k = k;
  out.cache_key = cache_key(endpoint.model_id, prompt.text, endpoint.params);

  if (auto cached = cache_.get(out.cache_key)) {
    ++hits_;
    out.raw = std::move(*cached);
  } else {
    ++misses_;
    slots_.acquire();
    try {
      ++calls_;
      out.raw = client.complete(endpoint, prompt.text);
    } catch (...) {
      slots_.release();
      throw;
    }
    slots_.release();
    const json request{{"model_id", endpoint.model_id},
                       {"prompt", prompt.text},
                       {"params", endpoint.params.to_json()}};
    cache_.put(out.cache_key, request, out.raw);
  }
  out.code = postprocess_code(out.raw);
  return out;
}

// ---------------------------------------------------------------------------
// Embeddings

StubEmbeddingProvider::StubEmbeddingProvider(int dimension) : dimension_(dimension) {
  if (dimension < 1) throw ConfigError("stub embedding dimension must be >= 1");
}

TokenEmbeddingSet StubEmbeddingProvider::embed_tokens(std::string_view text) {
  if (trim(text).empty()) throw PreconditionError("embed_tokens: empty text");
  auto tokens = tokenize_for_rouge(text);
  if (tokens.empty()) throw PreconditionError("embed_tokens: text has no tokens");
  TokenEmbeddingSet::Matrix vectors(static_cast<Eigen::Index>(tokens.size()), dimension_);
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    std::mt19937_64 rng(fnv1a64(tokens[static_cast<std::size_t>(i)]));
    for (Eigen::Index d = 0; d < dimension_; ++d) {
      // Raw generator bits mapped to [0, 1): portable across standard libraries.
      // Non-negative components keep cosines in [0, 1], so F1 stays bounded.
      vectors(i, d) = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }
    const double norm = vectors.row(i).norm();
    if (norm == 0.0) {
      vectors(i, 0) = 1.0;
    } else {
      vectors.row(i) /= norm;
    }
  }
  return TokenEmbeddingSet(std::move(tokens), std::move(vectors));
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::string model,
                                             std::string auth_env)
    : base_url_(std::move(base_url)), model_(std::move(model)), auth_env_(std::move(auth_env)) {
  parse_url(base_url_);
}

TokenEmbeddingSet parse_token_embeddings(const json& reply) {
  if (!reply.contains("tokens")) {
    if (reply.contains("embedding") || reply.contains("data") || reply.contains("vector")) {
      throw ContractError(
          "embedding provider returned a sentence-level vector; BERTScore needs per-token "
          "vectors, configure a token-level provider (POST /token_embeddings)");
    }
    throw ContractError("embedding reply lacks 'tokens' and 'vectors'");
  }
  const auto& toks = reply.at("tokens");
  const auto& vecs = reply.at("vectors");
  if (!toks.is_array() || !vecs.is_array()) throw ContractError("'tokens' and 'vectors' must be arrays");
  if (toks.size() != vecs.size()) {
    throw ContractError("embedding reply has " + std::to_string(toks.size()) + " tokens but " +
                        std::to_string(vecs.size()) + " vectors");
  }
  std::vector<std::string> tokens = toks.get<std::vector<std::string>>();
  const std::size_t dim = vecs.empty() ? 0 : vecs[0].size();
  TokenEmbeddingSet::Matrix m(static_cast<Eigen::Index>(vecs.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].size() != dim) throw ContractError("embedding vectors differ in dimension");
    for (std::size_t d = 0; d < dim; ++d) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = vecs[i][d].get<double>();
    }
  }
  return TokenEmbeddingSet(std::move(tokens), std::move(m));
}

TokenEmbeddingSet HttpEmbeddingProvider::embed_tokens(std::string_view text) {
  if (trim(text).empty()) throw PreconditionError("embed_tokens: empty text");
  const auto url = parse_url(base_url_);
  httplib::Client client(url.origin);
  std::optional<std::string> token;
  if (!auth_env_.empty()) {
    auto v = env_or_empty(auth_env_);
    if (!v.empty()) token = v;
  }
  const json body{{"model", model_}, {"text", text}};
  auto res = client.Post(url.prefix + "/token_embeddings", auth_headers(token), body.dump(),
                         "application/json");
  if (!res) {
    throw TransportError("embedding provider " + base_url_ + " unreachable: " +
                         httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw HttpStatusError(res->status, res->body,
                          "embedding provider returned HTTP " + std::to_string(res->status));
  }
  return parse_token_embeddings(json::parse(res->body));
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec,
                                                           const std::string& model,
                                                           const std::string& auth_env) {
  if (spec.empty() || spec == "stub" || spec.rfind("stub://", 0) == 0) {
    return std::make_unique<StubEmbeddingProvider>();
  }
  return std::make_unique<HttpEmbeddingProvider>(spec, model, auth_env);
}

}  // namespace qc
