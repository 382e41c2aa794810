#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>

#include <json.hpp>

#include "qc/prompting.hpp"
#include "qc/text_metrics.hpp"

namespace qc {

struct GenerationParams {
  int max_new_tokens = 15;
  double temperature = 0.7;
  double top_p = 0.7;
  int n_sequences = 1;

  // Throws ConfigError when a field is out of range.
  void validate() const;
  nlohmann::json to_json() const;
  static GenerationParams from_json(const nlohmann::json& j);

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct ModelEndpoint {
  std::string name;
  std::string base_url;  // http(s)://host[:port][/prefix] or stub://<kind>
  std::string model_id;
  // Environment variable holding the bearer token. Empty means the default
  // QC_AUTH_<NAME> (uppercased, non-alphanumerics replaced by '_').
  std::string auth_env;
  GenerationParams params;
  std::string parameters;  // display only, e.g. "7B"
  bool finetuned = false;  // adapted checkpoint served by the endpoint

  std::string auth_env_var() const;
  // Token from the environment, if set.
  std::optional<std::string> auth_token() const;
  bool is_stub() const;
  // Throws ConfigError on an empty name/model or a malformed URL.
  void validate() const;
};

struct GeneratedCode {
  std::string pair_id;
  std::string endpoint;
  std::string template_id;  // template key, e.g. "P1.period"
  int k = 0;
  std::string raw;
  std::string code;
  std::string cache_key;
};

// Stable digest of (model_id, prompt text, params) over canonical JSON.
std::string cache_key(std::string_view model_id, std::string_view prompt,
                      const GenerationParams& params);

// Directory of "<cache_key>.json" records. Entries are never rewritten once
// present. An empty directory path gives a process-local in-memory cache.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> get(const std::string& key) const;
  // Stores the raw completion unless the key is already present.
  void put(const std::string& key, const nlohmann::json& request, const std::string& raw);
  std::size_t size() const;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> memory_;
};

// One completion request: the prompt as a single user message.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ModelEndpoint& endpoint, const std::string& prompt) = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
};

// Chat-completions JSON API over HTTP(S): POST <base>/chat/completions.
// Transport failures, 429 and 5xx are retried with exponential backoff.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(RetryPolicy retry = {}, std::chrono::seconds timeout = std::chrono::seconds(60));
  std::string complete(const ModelEndpoint& endpoint, const std::string& prompt) override;

 private:
  RetryPolicy retry_;
  std::chrono::seconds timeout_;
};

// Offline client for tests and tutorials. Kinds:
//   stub://echo  answers with the reference code of the quote in the prompt's
//                final "Sentence:" block ("unknown" when the quote is not known)
//   stub://fail  always throws TransportError
class StubChatClient : public ChatClient {
 public:
  explicit StubChatClient(std::map<std::string, std::string> quote_to_code = {});
  std::string complete(const ModelEndpoint& endpoint, const std::string& prompt) override;

 private:
  std::map<std::string, std::string> quote_to_code_;
};

// Quote of the target block of a rendered prompt.
std::string target_quote(std::string_view prompt);

// Cache-aware front end shared by all cells of a run. At most
// `max_in_flight` client calls run concurrently.
class Gateway {
 public:
  explicit Gateway(ResponseCache& cache, int max_in_flight = 4);

  GeneratedCode generate(const ModelEndpoint& endpoint, ChatClient& client,
                         const RenderedPrompt& prompt, std::string pair_id, int k);

  std::size_t cache_hits() const { return hits_; }
  std::size_t cache_misses() const { return misses_; }
  std::size_t network_calls() const { return calls_; }

 private:
  ResponseCache& cache_;
  std::counting_semaphore<> slots_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, calls_{0};
};

// ---------------------------------------------------------------------------
// Token embeddings

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // Throws PreconditionError on blank text.
  virtual TokenEmbeddingSet embed_tokens(std::string_view text) = 0;
  virtual std::string name() const = 0;
};

// Deterministic non-negative unit vectors seeded by a hash of each token;
// identical tokens get identical vectors, so identical texts score 1.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(int dimension = 16);
  TokenEmbeddingSet embed_tokens(std::string_view text) override;
  std::string name() const override { return "stub"; }

 private:
  int dimension_;
};

// POST <base>/token_embeddings {"model", "text"} -> {"tokens": [...], "vectors": [[...], ...]}.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string base_url, std::string model, std::string auth_env = {});
  TokenEmbeddingSet embed_tokens(std::string_view text) override;
  std::string name() const override { return base_url_; }

 private:
  std::string base_url_, model_, auth_env_;
};

// Parses a provider reply; a sentence-level reply is a ContractError.
TokenEmbeddingSet parse_token_embeddings(const nlohmann::json& reply);

// "stub" or "stub://..." gives the stub provider; anything else is HTTP.
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec,
                                                           const std::string& model = {},
                                                           const std::string& auth_env = {});

}  // namespace qc
