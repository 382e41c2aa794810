#pragma once

#include <cstdint>
#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qc/corpus.hpp"
#include "qc/model_gateway.hpp"
#include "qc/prompting.hpp"
#include "qc/text_metrics.hpp"

namespace qc {

// Seed used wherever a config or command line does not give one.
inline constexpr std::uint64_t kDefaultSeed = 42;

struct EmbeddingConfig {
  std::string provider = "stub";  // "stub" or a base URL
  std::string model;
  std::string auth_env;
  int dimension = 16;  // stub only
};

struct ExperimentConfig {
  std::string name;
  std::filesystem::path dataset;
  double test_fraction = 0.1;
  std::uint64_t split_seed = kDefaultSeed;
  std::vector<ModelEndpoint> endpoints;
  std::vector<PromptTemplate> templates;
  std::vector<int> shot_counts{0};
  std::uint64_t selection_seed = kDefaultSeed;
  bool rouge = true;
  bool bertscore = true;
  EmbeddingConfig embedding;
  // Not part of the config digest.
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  int concurrency = 4;

  // Throws ConfigError.
  void validate() const;
};

// TOML text; relative paths resolve against `base_dir`. JSON text with the
// same structure is accepted too (detected by a leading '{').
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Digest over every field that can change results: dataset contents, split,
// endpoints (model, URL, generation params), templates, shots, seeds, metrics
// and embedding provider. Output/cache paths, concurrency, display names of
// the run and auth variables are excluded.
std::string config_digest(const ExperimentConfig& config, std::string_view dataset_digest);

struct Condition {
  std::string endpoint;
  PromptTemplate prompt;
  int k = 0;
  std::vector<QuoteCodePair> examples;

  // "<endpoint>__<template key>__k<k>", safe as a file name.
  std::string id() const;
};

// Dataset with split tags applied, plus the condition grid
// (endpoint x template x k, in config order).
struct RunPlan {
  Dataset dataset;
  std::vector<QuoteCodePair> test;
  std::vector<QuoteCodePair> train;
  std::vector<Condition> conditions;
  std::string dataset_digest;
  std::string config_digest;
};

// Uses the split tags already in the dataset when any pair is tagged "test";
// otherwise splits with the configured fraction and seed.
RunPlan plan_run(const ExperimentConfig& config);

struct CellResult {
  std::string pair_id;
  std::string prompt;
  std::optional<GeneratedCode> generation;
  PairScores scores;
  std::string error_kind;
  std::string error;

  bool ok() const { return generation.has_value() && error.empty(); }
};

struct ConditionResult {
  Condition condition;
  std::vector<CellResult> cells;  // test-split order
  std::optional<ScoreReport> aggregate;
  std::size_t ok = 0;
  std::size_t failed = 0;

  bool fully_failed() const { return !cells.empty() && ok == 0; }
};

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t network_calls = 0;
};

struct RunResult {
  std::string run_id;
  std::string config_digest;
  std::string dataset_digest;
  std::vector<ConditionResult> conditions;
  std::map<std::string, ModelEndpoint> endpoints;  // by name
  CacheStats cache;
  bool aborted = false;
  std::filesystem::path directory;

  bool any_condition_failed() const;
};

struct RunOptions {
  RetryPolicy retry;
  // Replaces the client for every endpoint (tests).
  std::shared_ptr<ChatClient> client;
  std::shared_ptr<EmbeddingProvider> embeddings;
};

// Runs every missing cell and writes the run directory:
//   manifest.json
//   conditions/<condition id>.jsonl   one record per test pair
//   report/conditions.csv, report/conditions.txt
// Cells already present and successful in the directory are not redone.
// Stops after a condition in which every cell failed (aborted = true).
RunResult run(const ExperimentConfig& config, const RunOptions& options = {});

// Reads a run directory back.
RunResult load_run(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Reports

struct ConditionRow {
  std::string condition;
  std::string model;
  std::string parameters;
  std::string adaptation;
  std::string prompt;  // instruction as shown to the model; newlines as "\n"
  int k = 0;
  std::size_t n = 0;
  std::size_t failed = 0;
  // bert P, P_std, R, R_std, F1, F1_std, then ROUGE-1/2/L F1.
  std::array<std::optional<double>, 9> metrics{};
};

inline constexpr std::array<std::string_view, 9> kConditionMetricColumns = {
    "bert_p", "bert_p_std", "bert_r", "bert_r_std", "bert_f1", "bert_f1_std", "rouge1", "rouge2", "rougeL"};

std::vector<ConditionRow> report_conditions(const RunResult& r);
// Shortest round-trip decimals, so parsing gives back the same doubles.
std::string format_conditions_csv(std::span<const ConditionRow> rows);
std::vector<ConditionRow> parse_conditions_csv(std::string_view csv);
// Aligned plain-text table, BERTScore as mean_{std} to 3 decimals.
std::string format_conditions_text(std::span<const ConditionRow> rows);

struct SweepPoint {
  std::string model;
  std::size_t train_size = 0;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  std::size_t n = 0;
};

struct SweepSeries {
  std::string model;
  std::vector<SweepPoint> points;  // ascending train_size
};

// Groups points per model; needs at least two distinct sizes and no repeated
// (model, size) pair.
std::vector<SweepSeries> size_sweep(std::vector<SweepPoint> points);
// One point per condition of each run (model = endpoint, or the condition id
// when an endpoint has several conditions in one run).
std::vector<SweepSeries> report_size_sweep(std::span<const std::pair<std::size_t, RunResult>> runs);
std::string format_size_sweep_csv(std::span<const SweepSeries> series);

}  // namespace qc
