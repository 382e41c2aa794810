#include "qc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "qc/error.hpp"
#include "qc/toml.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& table, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!table.is_object()) throw ConfigError(std::string(where) + " must be a table");
  for (const auto& [key, _] : table.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T field(const json& table, const char* key, T fallback, std::string_view where) {
  if (!table.contains(key)) return fallback;
  try {
    return table.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + std::string(key) + "' in " + std::string(where) + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string safe_name(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    out.push_back(std::isalnum(c) || c == '.' || c == '-' || c == '_' ? static_cast<char>(c) : '_');
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

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("config: 'dataset' is required");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("config: split.test_fraction must lie in (0, 1)");
  if (endpoints.empty()) throw ConfigError("config: at least one [[endpoint]] is required");
  if (templates.empty()) throw ConfigError("config: at least one template is required");
  if (shot_counts.empty()) throw ConfigError("config: at least one shot count is required");
  if (concurrency < 1) throw ConfigError("config: concurrency must be >= 1");
  if (embedding.dimension < 1) throw ConfigError("config: embedding.dimension must be >= 1");
  std::set<std::string> names, ids;
  for (const auto& e : endpoints) {
    e.validate();
    if (!names.insert(e.name).second) throw ConfigError("config: duplicate endpoint name '" + e.name + "'");
    if (!ids.insert(safe_name(e.name)).second) {
      throw ConfigError("config: endpoint names '" + e.name + "' collide after file-name sanitising");
    }
  }
  std::set<int> shots;
  for (int k : shot_counts) {
    FewShotConfig{k, selection_seed}.validate();
    if (!shots.insert(k).second) throw ConfigError("config: duplicate shot count " + std::to_string(k));
  }
  std::set<std::string> keys;
  for (const auto& t : templates) {
    if (!keys.insert(t.key()).second) throw ConfigError("config: duplicate template '" + t.key() + "'");
  }
}

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  json j;
  const auto t = trim(text);
  if (!t.empty() && t.front() == '{') {
    try {
      j = json::parse(t);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
  } else {
    j = parse_toml(text);
  }
  check_keys(j, {"name", "dataset", "output_dir", "cache_dir", "concurrency", "split", "fewshot", "metrics",
                 "embedding", "endpoint"},
             "config");

  ExperimentConfig c;
  c.name = field<std::string>(j, "name", "", "config");
  c.dataset = resolve(base_dir, field<std::string>(j, "dataset", "", "config"));
  const std::string out = field<std::string>(j, "output_dir", "", "config");
  c.output_dir = out.empty() ? resolve(base_dir, "runs/" + (c.name.empty() ? std::string("run") : safe_name(c.name)))
                             : resolve(base_dir, out);
  const std::string cache = field<std::string>(j, "cache_dir", "", "config");
  c.cache_dir = cache.empty() ? c.output_dir / "cache" : resolve(base_dir, cache);
  c.concurrency = field<int>(j, "concurrency", 4, "config");

  if (j.contains("split")) {
    const auto& s = j["split"];
    check_keys(s, {"test_fraction", "seed"}, "[split]");
    c.test_fraction = field<double>(s, "test_fraction", c.test_fraction, "[split]");
    c.split_seed = field<std::uint64_t>(s, "seed", c.split_seed, "[split]");
  }

  std::vector<std::string> template_keys{"P1.period"};
  std::vector<PromptTemplate> library = builtin_templates();
  if (j.contains("fewshot")) {
    const auto& f = j["fewshot"];
    check_keys(f, {"shots", "selection_seed", "templates", "templates_file"}, "[fewshot]");
    c.shot_counts = field<std::vector<int>>(f, "shots", c.shot_counts, "[fewshot]");
    c.selection_seed = field<std::uint64_t>(f, "selection_seed", c.selection_seed, "[fewshot]");
    template_keys = field<std::vector<std::string>>(f, "templates", template_keys, "[fewshot]");
    const std::string file = field<std::string>(f, "templates_file", "", "[fewshot]");
    if (!file.empty()) {
      auto extra = load_templates(resolve(base_dir, file));
      // File entries override built-ins with the same key.
      for (auto& t : extra) {
        auto it = std::find_if(library.begin(), library.end(), [&](const PromptTemplate& x) { return x.key() == t.key(); });
        if (it != library.end()) {
          *it = std::move(t);
        } else {
          library.push_back(std::move(t));
        }
      }
    }
  }
  for (const auto& key : template_keys) c.templates.push_back(find_template(library, key));

  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    check_keys(m, {"rouge", "bertscore"}, "[metrics]");
    c.rouge = field<bool>(m, "rouge", c.rouge, "[metrics]");
    c.bertscore = field<bool>(m, "bertscore", c.bertscore, "[metrics]");
  }
  if (j.contains("embedding")) {
    const auto& e = j["embedding"];
    check_keys(e, {"provider", "model", "auth_env", "dimension"}, "[embedding]");
    c.embedding.provider = field<std::string>(e, "provider", c.embedding.provider, "[embedding]");
    c.embedding.model = field<std::string>(e, "model", "", "[embedding]");
    c.embedding.auth_env = field<std::string>(e, "auth_env", "", "[embedding]");
    c.embedding.dimension = field<int>(e, "dimension", c.embedding.dimension, "[embedding]");
  }
  if (j.contains("endpoint")) {
    const auto& list = j["endpoint"];
    if (!list.is_array()) throw ConfigError("config: 'endpoint' must be an array of tables ([[endpoint]])");
    for (const auto& e : list) {
      check_keys(e,
                 {"name", "base_url", "model_id", "auth_env", "parameters", "finetuned", "max_new_tokens",
                  "temperature", "top_p", "n_sequences"},
                 "[[endpoint]]");
      ModelEndpoint ep;
      ep.name = field<std::string>(e, "name", "", "[[endpoint]]");
      ep.base_url = field<std::string>(e, "base_url", "", "[[endpoint]]");
      ep.model_id = field<std::string>(e, "model_id", ep.name, "[[endpoint]]");
      ep.auth_env = field<std::string>(e, "auth_env", "", "[[endpoint]]");
      ep.parameters = field<std::string>(e, "parameters", "", "[[endpoint]]");
      ep.finetuned = field<bool>(e, "finetuned", false, "[[endpoint]]");
      ep.params.max_new_tokens = field<int>(e, "max_new_tokens", ep.params.max_new_tokens, "[[endpoint]]");
      ep.params.temperature = field<double>(e, "temperature", ep.params.temperature, "[[endpoint]]");
      ep.params.top_p = field<double>(e, "top_p", ep.params.top_p, "[[endpoint]]");
      ep.params.n_sequences = field<int>(e, "n_sequences", ep.params.n_sequences, "[[endpoint]]");
      c.endpoints.push_back(std::move(ep));
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

std::string config_digest(const ExperimentConfig& c, std::string_view dataset_digest) {
  json endpoints = json::array();
  for (const auto& e : c.endpoints) {
    endpoints.push_back({{"name", e.name},
                         {"base_url", e.base_url},
                         {"model_id", e.model_id},
                         {"params", e.params.to_json()},
                         {"parameters", e.parameters},
                         {"finetuned", e.finetuned}});
  }
  json templates = json::array();
  for (const auto& t : c.templates) {
    templates.push_back({{"id", t.id}, {"text", t.text}, {"terminator", to_string(t.terminator)}});
  }
  const json semantic{{"dataset", dataset_digest},
                      {"split", {{"test_fraction", c.test_fraction}, {"seed", c.split_seed}}},
                      {"endpoints", endpoints},
                      {"templates", templates},
                      {"shots", c.shot_counts},
                      {"selection_seed", c.selection_seed},
                      {"metrics", {{"rouge", c.rouge}, {"bertscore", c.bertscore}}},
                      {"embedding",
                       {{"provider", c.embedding.provider},
                        {"model", c.embedding.model},
                        {"dimension", c.embedding.dimension}}}};
  return sha256_hex(semantic.dump());
}

std::string Condition::id() const {
  return safe_name(endpoint) + "__" + prompt.key() + "__k" + std::to_string(k);
}

RunPlan plan_run(const ExperimentConfig& config) {
  config.validate();
  RunPlan plan;
  const std::string text = read_file(config.dataset);
  plan.dataset_digest = sha256_hex(text);
  Dataset d = parse_dataset(text, format_for_path(config.dataset));
  const bool tagged = std::any_of(d.pairs().begin(), d.pairs().end(),
                                  [](const QuoteCodePair& p) { return p.split == Split::test; });
  plan.dataset = tagged ? std::move(d) : split_dataset(d, config.test_fraction, config.split_seed);
  plan.test = plan.dataset.pairs_in(Split::test);
  plan.train = plan.dataset.pairs_in(Split::train);
  if (plan.test.empty()) throw EmptyDatasetError("the test split is empty");
  plan.config_digest = config_digest(config, plan.dataset_digest);
  for (const auto& e : config.endpoints) {
    for (const auto& t : config.templates) {
      for (int k : config.shot_counts) {
        Condition c{e.name, t, k, select_examples(plan.train, static_cast<std::size_t>(k), config.selection_seed)};
        plan.conditions.push_back(std::move(c));
      }
    }
  }
  return plan;
}

bool RunResult::any_condition_failed() const {
  return aborted || std::any_of(conditions.begin(), conditions.end(),
                                [](const ConditionResult& c) { return c.fully_failed(); });
}

// ---------------------------------------------------------------------------
// Serialisation of run artefacts

namespace {

json prf_json(const PrecisionRecallF1& s) { return {{"p", s.precision}, {"r", s.recall}, {"f1", s.f1}}; }

PrecisionRecallF1 prf_from(const json& j) {
  return {j.at("p").get<double>(), j.at("r").get<double>(), j.at("f1").get<double>()};
}

json cell_json(const Condition& c, const CellResult& cell, const std::string& reference) {
  json j{{"pair_id", cell.pair_id},
         {"endpoint", c.endpoint},
         {"template", c.prompt.key()},
         {"k", c.k},
         {"prompt", cell.prompt},
         {"reference", reference}};
  if (!cell.ok()) {
    j["status"] = "error";
    j["error_kind"] = cell.error_kind;
    j["error"] = cell.error;
    return j;
  }
  j["status"] = "ok";
  j["raw"] = cell.generation->raw;
  j["code"] = cell.generation->code;
  j["cache_key"] = cell.generation->cache_key;
  json scores = json::object();
  if (cell.scores.rouge) {
    scores["rouge1"] = prf_json(cell.scores.rouge->rouge1);
    scores["rouge2"] = prf_json(cell.scores.rouge->rouge2);
    scores["rougeL"] = prf_json(cell.scores.rouge->rougeL);
  }
  if (cell.scores.bert) {
    scores["bert"] = {{"p", cell.scores.bert->precision}, {"r", cell.scores.bert->recall}, {"f1", cell.scores.bert->f1}};
  }
  j["scores"] = scores;
  return j;
}

CellResult cell_from(const json& j, const Condition& c) {
  CellResult cell;
  cell.pair_id = j.at("pair_id").get<std::string>();
  cell.prompt = j.value("prompt", "");
  if (j.value("status", "") != "ok") {
    cell.error_kind = j.value("error_kind", "error");
    cell.error = j.value("error", "unknown error");
    if (cell.error.empty()) cell.error = "unknown error";
    return cell;
  }
  GeneratedCode g;
  g.pair_id = cell.pair_id;
  g.endpoint = c.endpoint;
  g.template_id = c.prompt.key();
  g.k = c.k;
  g.raw = j.at("raw").get<std::string>();
  g.code = j.at("code").get<std::string>();
  g.cache_key = j.value("cache_key", "");
  cell.generation = std::move(g);
  const auto& s = j.value("scores", json::object());
  if (s.contains("rouge1")) {
    cell.scores.rouge = RougeScores{prf_from(s["rouge1"]), prf_from(s["rouge2"]), prf_from(s["rougeL"])};
  }
  if (s.contains("bert")) {
    const auto& b = s["bert"];
    cell.scores.bert = BertScoreTriple{b.at("p").get<double>(), b.at("r").get<double>(), b.at("f1").get<double>()};
  }
  return cell;
}

// Last record per pair wins.
std::map<std::string, CellResult> read_cells(const fs::path& path, const Condition& c) {
  std::map<std::string, CellResult> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto cell = cell_from(json::parse(line), c);
      out[cell.pair_id] = std::move(cell);
    } catch (const json::exception& e) {
      // A torn final line from an interrupted run is skipped and redone.
      spdlog::warn("{}:{}: skipping unreadable record ({})", path.string(), n, e.what());
    }
  }
  return out;
}

json report_json(const ScoreReport& r) {
  json metrics = json::object();
  for (Metric m : kAllMetrics) {
    if (const auto& s = r[m]) {
      metrics[std::string(metric_name(m))] = {{"mean", s->mean}, {"std", s->std}, {"count", s->count}};
    }
  }
  return {{"pairs", r.pairs}, {"metrics", metrics}};
}

ScoreReport report_from(const json& j) {
  ScoreReport r;
  r.pairs = j.at("pairs").get<std::size_t>();
  const auto& metrics = j.at("metrics");
  for (Metric m : kAllMetrics) {
    const std::string name(metric_name(m));
    if (metrics.contains(name)) {
      const auto& s = metrics[name];
      r.metrics[static_cast<std::size_t>(m)] =
          MetricSummary{s.at("mean").get<double>(), s.at("std").get<double>(), s.at("count").get<std::size_t>()};
    }
  }
  return r;
}

json pair_json(const QuoteCodePair& p) {
  return {{"id", p.id}, {"quote", p.quote}, {"code", p.code}, {"source", p.source}};
}

json endpoint_json(const ModelEndpoint& e) {
  return {{"name", e.name},
          {"base_url", e.base_url},
          {"model_id", e.model_id},
          {"parameters", e.parameters},
          {"finetuned", e.finetuned},
          {"params", e.params.to_json()}};
}

json manifest_json(const RunResult& r, const std::string& name, const std::string& created_at,
                   std::size_t test_pairs) {
  json conditions = json::array();
  for (const auto& c : r.conditions) {
    json examples = json::array();
    for (const auto& ex : c.condition.examples) examples.push_back(pair_json(ex));
    json errors = json::array();
    for (const auto& cell : c.cells) {
      if (!cell.ok()) errors.push_back({{"pair_id", cell.pair_id}, {"kind", cell.error_kind}, {"message", cell.error}});
    }
    json entry{{"id", c.condition.id()},
               {"endpoint", c.condition.endpoint},
               {"template",
                {{"id", c.condition.prompt.id},
                 {"text", c.condition.prompt.text},
                 {"terminator", to_string(c.condition.prompt.terminator)}}},
               {"k", c.condition.k},
               {"examples", examples},
               {"cells", c.cells.size()},
               {"ok", c.ok},
               {"failed", c.failed},
               {"errors", errors}};
    entry["aggregate"] = c.aggregate ? report_json(*c.aggregate) : json(nullptr);
    conditions.push_back(std::move(entry));
  }
  json endpoints = json::array();
  for (const auto& [_, e] : r.endpoints) endpoints.push_back(endpoint_json(e));
  const bool complete = !r.aborted && std::all_of(r.conditions.begin(), r.conditions.end(),
                                                  [](const ConditionResult& c) { return c.failed == 0; });
  return {{"run_id", r.run_id},
          {"name", name},
          {"config_digest", r.config_digest},
          {"dataset_digest", r.dataset_digest},
          {"created_at", created_at},
          {"updated_at", now_utc()},
          {"status", r.aborted ? "aborted" : complete ? "complete" : "partial"},
          {"test_pairs", test_pairs},
          {"endpoints", endpoints},
          {"cache", {{"hits", r.cache.hits}, {"misses", r.cache.misses}, {"network_calls", r.cache.network_calls}}},
          {"conditions", conditions}};
}

void finalize_condition(ConditionResult& c) {
  c.ok = 0;
  c.failed = 0;
  std::vector<PairScores> scores;
  for (const auto& cell : c.cells) {
    if (cell.ok()) {
      ++c.ok;
      scores.push_back(cell.scores);
    } else {
      ++c.failed;
    }
  }
  c.aggregate.reset();
  if (!scores.empty()) c.aggregate = aggregate_scores(scores);
}

void write_reports(const RunResult& r, const fs::path& dir) {
  const auto rows = report_conditions(r);
  fs::create_directories(dir / "report");
  write_file_atomic(dir / "report" / "conditions.csv", format_conditions_csv(rows));
  write_file_atomic(dir / "report" / "conditions.txt", format_conditions_text(rows));
}

}  // namespace

// ---------------------------------------------------------------------------
// Running

RunResult run(const ExperimentConfig& config, const RunOptions& options) {
  const RunPlan plan = plan_run(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir / "conditions");

  std::string created_at = now_utc();
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto existing = json::parse(read_file(manifest_path));
    if (existing.value("config_digest", "") != plan.config_digest) {
      throw ConfigError("output directory " + dir.string() +
                        " holds a run of a different configuration; choose another output_dir");
    }
    created_at = existing.value("created_at", created_at);
  }

  RunResult result;
  result.config_digest = plan.config_digest;
  result.dataset_digest = plan.dataset_digest;
  result.run_id = plan.config_digest.substr(0, 12);
  result.directory = dir;
  for (const auto& e : config.endpoints) result.endpoints.emplace(e.name, e);

  ResponseCache cache(config.cache_dir);
  Gateway gateway(cache, config.concurrency);

  std::map<std::string, std::string> golden;
  for (const auto& p : plan.dataset.pairs()) golden.emplace(p.quote, p.code);
  auto stub_client = std::make_shared<StubChatClient>(golden);
  auto http_client = std::make_shared<HttpChatClient>(options.retry);
  std::shared_ptr<EmbeddingProvider> embeddings = options.embeddings;
  if (!embeddings && config.bertscore) {
    if (config.embedding.provider == "stub" || config.embedding.provider.rfind("stub://", 0) == 0) {
      embeddings = std::make_shared<StubEmbeddingProvider>(config.embedding.dimension);
    } else {
      embeddings = make_embedding_provider(config.embedding.provider, config.embedding.model, config.embedding.auth_env);
    }
  }

  std::map<std::string, const QuoteCodePair*> by_id;
  for (const auto& p : plan.test) by_id.emplace(p.id, &p);

  for (const auto& condition : plan.conditions) {
    const ModelEndpoint& endpoint = result.endpoints.at(condition.endpoint);
    ChatClient& client = options.client ? *options.client
                         : endpoint.is_stub() ? static_cast<ChatClient&>(*stub_client)
                                              : static_cast<ChatClient&>(*http_client);
    const fs::path cells_path = dir / "conditions" / (condition.id() + ".jsonl");
    auto existing = read_cells(cells_path, condition);

    std::vector<const QuoteCodePair*> todo;
    for (const auto& p : plan.test) {
      auto it = existing.find(p.id);
      if (it == existing.end() || !it->second.ok()) todo.push_back(&p);
    }
    spdlog::info("condition {}: {} of {} cells to run", condition.id(), todo.size(), plan.test.size());

    std::mutex append_mutex;
    std::ofstream journal;
    if (!todo.empty()) journal.open(cells_path, std::ios::app | std::ios::binary);
    std::map<std::string, CellResult> fresh;
    std::atomic<std::size_t> next{0};

    auto work = [&] {
      while (true) {
        const std::size_t i = next++;
        if (i >= todo.size()) return;
        const QuoteCodePair& pair = *todo[i];
        CellResult cell;
        cell.pair_id = pair.id;
        try {
          const auto prompt = render_prompt(condition.prompt, pair.quote, condition.examples);
          cell.prompt = prompt.text;
          auto generated = gateway.generate(endpoint, client, prompt, pair.id, condition.k);
          if (config.rouge) cell.scores.rouge = rouge(generated.code, pair.code);
          if (config.bertscore) {
            cell.scores.bert = bertscore(embeddings->embed_tokens(generated.code), embeddings->embed_tokens(pair.code));
          }
          cell.generation = std::move(generated);
        } catch (const Error& e) {
          cell.generation.reset();
          cell.error_kind = e.kind();
          cell.error = e.what();
        } catch (const std::exception& e) {
          cell.generation.reset();
          cell.error_kind = "internal";
          cell.error = e.what();
        }
        std::lock_guard lock(append_mutex);
        journal << cell_json(condition, cell, pair.code).dump() << '\n';
        journal.flush();
        fresh[cell.pair_id] = std::move(cell);
      }
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), todo.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
    if (threads > 0) work();
    for (auto& t : pool) t.join();
    if (journal.is_open()) journal.close();

    ConditionResult cr;
    cr.condition = condition;
    std::string canonical;
    for (const auto& p : plan.test) {
      auto it = fresh.find(p.id);
      CellResult cell = it != fresh.end() ? std::move(it->second) : std::move(existing.at(p.id));
      canonical += cell_json(condition, cell, p.code).dump() + "\n";
      cr.cells.push_back(std::move(cell));
    }
    write_file_atomic(cells_path, canonical);
    finalize_condition(cr);
    if (cr.failed > 0) {
      spdlog::warn("condition {}: {} of {} cells failed", condition.id(), cr.failed, cr.cells.size());
    }
    const bool fully_failed = cr.fully_failed();
    result.conditions.push_back(std::move(cr));
    if (fully_failed) {
      spdlog::error("condition {}: every cell failed; stopping the run", condition.id());
      result.aborted = true;
      break;
    }
  }

  result.cache = {gateway.cache_hits(), gateway.cache_misses(), gateway.network_calls()};
  write_file_atomic(manifest_path, manifest_json(result, config.name, created_at, plan.test.size()).dump(2) + "\n");
  write_reports(result, dir);
  return result;
}

RunResult load_run(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw NotFoundError("no manifest.json in " + dir.string());
  const auto m = json::parse(read_file(manifest_path));
  RunResult r;
  r.directory = dir;
  r.run_id = m.at("run_id").get<std::string>();
  r.config_digest = m.at("config_digest").get<std::string>();
  r.dataset_digest = m.value("dataset_digest", "");
  r.aborted = m.value("status", "") == "aborted";
  const auto& cache = m.value("cache", json::object());
  r.cache = {cache.value("hits", std::size_t{0}), cache.value("misses", std::size_t{0}),
             cache.value("network_calls", std::size_t{0})};
  for (const auto& e : m.value("endpoints", json::array())) {
    ModelEndpoint ep;
    ep.name = e.at("name").get<std::string>();
    ep.base_url = e.value("base_url", "");
    ep.model_id = e.value("model_id", "");
    ep.parameters = e.value("parameters", "");
    ep.finetuned = e.value("finetuned", false);
    if (e.contains("params")) ep.params = GenerationParams::from_json(e["params"]);
    r.endpoints.emplace(ep.name, ep);
  }
  for (const auto& c : m.at("conditions")) {
    ConditionResult cr;
    cr.condition.endpoint = c.at("endpoint").get<std::string>();
    const auto& t = c.at("template");
    cr.condition.prompt = {t.at("id").get<std::string>(), t.at("text").get<std::string>(),
                           parse_terminator(t.at("terminator").get<std::string>())};
    cr.condition.k = c.at("k").get<int>();
    for (const auto& ex : c.value("examples", json::array())) {
      cr.condition.examples.push_back({ex.at("id").get<std::string>(), ex.at("quote").get<std::string>(),
                                       ex.at("code").get<std::string>(), ex.value("source", ""), Split::train});
    }
    auto cells = read_cells(dir / "conditions" / (cr.condition.id() + ".jsonl"), cr.condition);
    // Canonical files are written in test order; keep that order.
    std::istringstream in(read_file(dir / "conditions" / (cr.condition.id() + ".jsonl")));
    std::string line;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto id = json::parse(line).at("pair_id").get<std::string>();
      if (seen.insert(id).second) cr.cells.push_back(cells.at(id));
    }
    cr.ok = c.value("ok", std::size_t{0});
    cr.failed = c.value("failed", std::size_t{0});
    if (c.contains("aggregate") && !c["aggregate"].is_null()) cr.aggregate = report_from(c["aggregate"]);
    r.conditions.push_back(std::move(cr));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string adaptation_label(bool finetuned, int k) {
  std::string shots = k == 1 ? "Few-shot (1 example)" : "Few-shot (" + std::to_string(k) + " examples)";
  if (finetuned) return k == 0 ? "Finetuning" : "Finetuning + " + shots;
  return k == 0 ? "Zero-shot" : shots;
}

std::string prompt_label(const PromptTemplate& t, int k) {
  std::string s = t.instruction();
  if (k > 0) {
    if (t.terminator == Terminator::period) s += "\n";
    s += kExamplesLeadIn;
  }
  while (!s.empty() && s.back() == '\n') s.pop_back();
  std::string out;
  for (char c : s) {
    if (c == '\n') {
      out += "\\n";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> opt_parse(std::string_view s) {
  if (trim(s).empty()) return std::nullopt;
  return parse_double(s);
}

const std::vector<std::string>& condition_header() {
  static const std::vector<std::string> h = [] {
    std::vector<std::string> v{"condition", "model", "parameters", "adaptation", "prompt", "k", "n", "failed"};
    for (auto c : kConditionMetricColumns) v.emplace_back(c);
    return v;
  }();
  return h;
}

std::size_t display_width(std::string_view s) { return utf8_length(s); }

}  // namespace

std::vector<ConditionRow> report_conditions(const RunResult& r) {
  std::vector<ConditionRow> rows;
  for (const auto& c : r.conditions) {
    ConditionRow row;
    row.condition = c.condition.id();
    row.model = c.condition.endpoint;
    auto ep = r.endpoints.find(c.condition.endpoint);
    const bool finetuned = ep != r.endpoints.end() && ep->second.finetuned;
    if (ep != r.endpoints.end()) row.parameters = ep->second.parameters;
    row.adaptation = adaptation_label(finetuned, c.condition.k);
    row.prompt = prompt_label(c.condition.prompt, c.condition.k);
    row.k = c.condition.k;
    row.n = c.ok;
    row.failed = c.failed;
    if (c.aggregate) {
      const auto& a = *c.aggregate;
      auto put = [&](std::size_t slot, Metric m, bool std_dev) {
        if (const auto& s = a[m]) row.metrics[slot] = std_dev ? s->std : s->mean;
      };
      put(0, Metric::bert_p, false);
      put(1, Metric::bert_p, true);
      put(2, Metric::bert_r, false);
      put(3, Metric::bert_r, true);
      put(4, Metric::bert_f1, false);
      put(5, Metric::bert_f1, true);
      put(6, Metric::rouge1_f1, false);
      put(7, Metric::rouge2_f1, false);
      put(8, Metric::rougeL_f1, false);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_conditions_csv(std::span<const ConditionRow> rows) {
  std::string out = format_csv_row(condition_header());
  for (const auto& r : rows) {
    std::vector<std::string> f{r.condition, r.model, r.parameters, r.adaptation, r.prompt,
                               std::to_string(r.k), std::to_string(r.n), std::to_string(r.failed)};
    for (const auto& m : r.metrics) f.push_back(opt_cell(m));
    out += format_csv_row(f);
  }
  return out;
}

std::vector<ConditionRow> parse_conditions_csv(std::string_view csv) {
  CsvTable t(csv);
  std::vector<int> cols;
  for (const auto& name : condition_header()) cols.push_back(t.require_column(name));
  std::vector<ConditionRow> rows;
  for (const auto& f : t.rows()) {
    ConditionRow r;
    r.condition = f[cols[0]];
    r.model = f[cols[1]];
    r.parameters = f[cols[2]];
    r.adaptation = f[cols[3]];
    r.prompt = f[cols[4]];
    r.k = static_cast<int>(parse_double(f[cols[5]]));
    r.n = static_cast<std::size_t>(parse_double(f[cols[6]]));
    r.failed = static_cast<std::size_t>(parse_double(f[cols[7]]));
    for (std::size_t i = 0; i < r.metrics.size(); ++i) r.metrics[i] = opt_parse(f[cols[8 + i]]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_conditions_text(std::span<const ConditionRow> rows) {
  const std::vector<std::string> header{"Model", "Params", "Adaptation", "Prompt", "n",
                                        "BERT P", "BERT R", "BERT F1", "R-1", "R-2", "R-L"};
  std::vector<std::vector<std::string>> table{header};
  auto fixed3 = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return std::string(buf);
  };
  auto with_std = [&](const std::optional<double>& mean, const std::optional<double>& sd) {
    return mean && sd ? format_mean_std(*mean, *sd) : std::string("-");
  };
  for (const auto& r : rows) {
    table.push_back({r.model, r.parameters.empty() ? "-" : r.parameters, r.adaptation, r.prompt,
                     std::to_string(r.n) + (r.failed ? " (+" + std::to_string(r.failed) + " failed)" : ""),
                     with_std(r.metrics[0], r.metrics[1]), with_std(r.metrics[2], r.metrics[3]),
                     with_std(r.metrics[4], r.metrics[5]), fixed3(r.metrics[6]), fixed3(r.metrics[7]),
                     fixed3(r.metrics[8])});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], display_width(row[i]));
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i];
      if (i + 1 < row.size()) line.append(width[i] - display_width(row[i]), ' ');
    }
    out += line + "\n";
  };
  emit(table[0]);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (std::size_t i = 1; i < table.size(); ++i) emit(table[i]);
  return out;
}

std::vector<SweepSeries> size_sweep(std::vector<SweepPoint> points) {
  std::set<std::size_t> sizes;
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& p : points) {
    sizes.insert(p.train_size);
    if (!seen.insert({p.model, p.train_size}).second) {
      throw ValidationError("size sweep: model '" + p.model + "' has two results for size " +
                            std::to_string(p.train_size));
    }
  }
  if (sizes.size() < 2) throw PreconditionError("size sweep needs at least two dataset sizes");
  std::map<std::string, SweepSeries> by_model;
  std::vector<std::string> order;
  for (auto& p : points) {
    auto [it, inserted] = by_model.try_emplace(p.model);
    if (inserted) {
      order.push_back(p.model);
      it->second.model = p.model;
    }
    it->second.points.push_back(std::move(p));
  }
  std::vector<SweepSeries> out;
  for (const auto& model : order) {
    auto s = std::move(by_model.at(model));
    std::sort(s.points.begin(), s.points.end(),
              [](const SweepPoint& a, const SweepPoint& b) { return a.train_size < b.train_size; });
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SweepSeries> report_size_sweep(std::span<const std::pair<std::size_t, RunResult>> runs) {
  std::vector<SweepPoint> points;
  for (const auto& [size, r] : runs) {
    std::map<std::string, int> per_endpoint;
    for (const auto& c : r.conditions) ++per_endpoint[c.condition.endpoint];
    for (const auto& c : r.conditions) {
      if (!c.aggregate || !(*c.aggregate)[Metric::bert_f1]) continue;
      const auto& f1 = *(*c.aggregate)[Metric::bert_f1];
      const std::string model = per_endpoint[c.condition.endpoint] > 1 ? c.condition.id() : c.condition.endpoint;
      points.push_back({model, size, f1.mean, f1.std, f1.count});
    }
  }
  return size_sweep(std::move(points));
}

std::string format_size_sweep_csv(std::span<const SweepSeries> series) {
  std::string out = format_csv_row(std::vector<std::string>{"model", "train_size", "bert_f1", "bert_f1_std", "n"});
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      out += format_csv_row(std::vector<std::string>{p.model, std::to_string(p.train_size), format_double(p.mean_f1),
                                                     format_double(p.std_f1), std::to_string(p.n)});
    }
  }
  return out;
}

}  // namespace qc
