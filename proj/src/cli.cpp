#include "qc/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "qc/agreement.hpp"
#include "qc/annotation.hpp"
#include "qc/annotation_http.hpp"
#include "qc/corpus.hpp"
#include "qc/error.hpp"
#include "qc/experiment.hpp"
#include "qc/model_gateway.hpp"
#include "qc/prompting.hpp"
#include "qc/readability.hpp"
#include "qc/text_metrics.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

json metric_json(const ScoreReport& r) {
  json m = json::object();
  for (Metric k : kAllMetrics) {
    if (const auto& s = r[k]) m[std::string(metric_name(k))] = {{"mean", s->mean}, {"std", s->std}, {"n", s->count}};
  }
  return {{"pairs", r.pairs}, {"metrics", m}};
}

json profile_json(const std::string& id, const ReadabilityProfile& p) {
  return {{"id", id},
          {"char_length", p.char_length},
          {"word_count", p.word_count},
          {"sentence_count", p.sentence_count},
          {"syllable_count", p.syllable_count},
          {"difficult_word_count", p.difficult_word_count},
          {"difficult_words", p.difficult_words},
          {"flesch_reading_ease", p.flesch_reading_ease},
          {"coleman_liau", p.coleman_liau},
          {"ari", p.ari}};
}

// (id, text) records from JSONL ({"id", "quote"|"text"}) or plain lines.
std::vector<std::pair<std::string, std::string>> read_texts(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto lines = read_lines(path);
  const bool jsonl = path.extension() == ".jsonl" || path.extension() == ".json";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    if (jsonl) {
      const auto j = json::parse(lines[i]);
      std::string id = j.contains("id") ? j["id"].get<std::string>() : "line" + std::to_string(i + 1);
      std::string text = j.contains("quote") ? j["quote"].get<std::string>() : j.at("text").get<std::string>();
      out.emplace_back(std::move(id), std::move(text));
    } else {
      out.emplace_back("line" + std::to_string(i + 1), lines[i]);
    }
  }
  return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct Commands {
  std::ostream& out;
  std::ostream& err;
  std::function<int()> action;
};

// ---------------------------------------------------------------------------

void add_dataset(CLI::App& app, Commands& c) {
  auto* ds = app.add_subcommand("dataset", "Inspect, split and merge quote-code datasets");
  ds->require_subcommand(1);

  {
    auto* sub = ds->add_subcommand("stats", "Per-split and per-source statistics as JSON");
    auto file = std::make_shared<std::string>();
    auto unit = std::make_shared<std::string>("chars");
    sub->add_option("file", *file, "Dataset (.jsonl or .csv)")->required()->check(CLI::ExistingFile);
    sub->add_option("--unit", *unit, "Length unit")->check(CLI::IsMember({"chars", "tokens"}));
    sub->callback([&c, file, unit] {
      c.action = [&c, file, unit] {
        const auto d = load_dataset(*file, format_for_path(*file));
        const auto stats = compute_stats(d, *unit == "tokens" ? LengthUnit::tokens : LengthUnit::characters);
        c.out << to_json(stats).dump(2) << '\n';
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ds->add_subcommand("split", "Stratified train/test split; writes the tagged dataset");
    auto file = std::make_shared<std::string>();
    auto output = std::make_shared<std::string>();
    auto fraction = std::make_shared<double>(0.1);
    auto seed = std::make_shared<std::uint64_t>(kDefaultSeed);
    sub->add_option("file", *file, "Dataset (.jsonl or .csv)")->required()->check(CLI::ExistingFile);
    sub->add_option("--test-fraction", *fraction, "Share of pairs in the test split")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--seed", *seed, "Shuffle seed");
    sub->add_option("-o,--output", *output, "Output file (format from extension; stdout as JSONL)");
    sub->callback([&c, file, output, fraction, seed] {
      c.action = [&c, file, output, fraction, seed] {
        const auto d = load_dataset(*file, format_for_path(*file));
        const auto s = split_dataset(d, *fraction, *seed);
        const auto fmt = output->empty() ? DatasetFormat::jsonl : format_for_path(*output);
        emit(c.out, *output, serialize_dataset(s, fmt));
        c.err << "split " << s.size() << " pairs: " << s.pairs_in(Split::train).size() << " train, "
              << s.pairs_in(Split::test).size() << " test\n";
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ds->add_subcommand("merge", "Concatenate two datasets with disjoint ids");
    auto a = std::make_shared<std::string>();
    auto b = std::make_shared<std::string>();
    auto la = std::make_shared<std::string>("a");
    auto lb = std::make_shared<std::string>("b");
    auto output = std::make_shared<std::string>();
    sub->add_option("first", *a)->required()->check(CLI::ExistingFile);
    sub->add_option("second", *b)->required()->check(CLI::ExistingFile);
    sub->add_option("--label-a", *la, "Source label for unlabelled records of the first file");
    sub->add_option("--label-b", *lb, "Source label for unlabelled records of the second file");
    sub->add_option("-o,--output", *output, "Output file (stdout as JSONL)");
    sub->callback([&c, a, b, la, lb, output] {
      c.action = [&c, a, b, la, lb, output] {
        const auto m = merge(load_dataset(*a, format_for_path(*a)), load_dataset(*b, format_for_path(*b)), *la, *lb);
        emit(c.out, *output, serialize_dataset(m, output->empty() ? DatasetFormat::jsonl : format_for_path(*output)));
        return kExitOk;
      };
    });
  }
}

void add_run(CLI::App& app, Commands& c) {
  auto* sub = app.add_subcommand("run", "Run (or resume) an experiment from a TOML config");
  auto config = std::make_shared<std::string>();
  auto seed = std::make_shared<std::optional<std::uint64_t>>();
  auto output_dir = std::make_shared<std::string>();
  auto cache_dir = std::make_shared<std::string>();
  auto concurrency = std::make_shared<int>(0);
  sub->add_option("config", *config, "Experiment config")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", *seed, "Override both the split and the exemplar-selection seed");
  sub->add_option("--output-dir", *output_dir, "Override the run directory");
  sub->add_option("--cache-dir", *cache_dir, "Override the response cache directory");
  sub->add_option("--concurrency", *concurrency, "Override the number of in-flight requests")->check(CLI::PositiveNumber);
  sub->callback([&c, config, seed, output_dir, cache_dir, concurrency] {
    c.action = [&c, config, seed, output_dir, cache_dir, concurrency] {
      auto cfg = load_config(*config);
      if (*seed) cfg.split_seed = cfg.selection_seed = **seed;
      if (!output_dir->empty()) {
        cfg.output_dir = *output_dir;
        if (cache_dir->empty()) cfg.cache_dir = cfg.output_dir / "cache";
      }
      if (!cache_dir->empty()) cfg.cache_dir = *cache_dir;
      if (*concurrency > 0) cfg.concurrency = *concurrency;
      const auto r = run(cfg);
      json conditions = json::array();
      for (const auto& cr : r.conditions) {
        conditions.push_back({{"id", cr.condition.id()}, {"ok", cr.ok}, {"failed", cr.failed}});
      }
      const bool failed = r.aborted || r.any_condition_failed();
      c.out << json{{"run_id", r.run_id},
                    {"directory", r.directory.string()},
                    {"status", r.aborted ? "aborted" : failed ? "partial" : "complete"},
                    {"conditions", conditions},
                    {"cache", {{"hits", r.cache.hits}, {"misses", r.cache.misses}, {"network_calls", r.cache.network_calls}}}}
                   .dump(2)
            << '\n';
      if (failed) c.err << "run finished with failed cells; rerun to retry them\n";
      return failed ? kExitFailure : kExitOk;
    };
  });
}

void add_score(CLI::App& app, Commands& c) {
  auto* sub = app.add_subcommand("score", "Score predictions against references (one text per line)");
  auto pred = std::make_shared<std::string>();
  auto ref = std::make_shared<std::string>();
  auto metrics = std::make_shared<std::vector<std::string>>(std::vector<std::string>{"rouge"});
  auto provider = std::make_shared<std::string>("stub");
  auto model = std::make_shared<std::string>();
  auto format = std::make_shared<std::string>("csv");
  sub->add_option("--pred", *pred, "Predicted codes")->required()->check(CLI::ExistingFile);
  sub->add_option("--ref", *ref, "Reference codes")->required()->check(CLI::ExistingFile);
  sub->add_option("--metrics", *metrics, "rouge and/or bert")
      ->delimiter(',')
      ->check(CLI::IsMember({"rouge", "bert"}));
  sub->add_option("--embeddings", *provider, "Token-embedding provider: stub or a base URL");
  sub->add_option("--embedding-model", *model, "Model name sent to the provider");
  sub->add_option("--format", *format, "csv (per pair) or json (aggregate)")->check(CLI::IsMember({"csv", "json"}));
  sub->callback([&c, pred, ref, metrics, provider, model, format] {
    c.action = [&c, pred, ref, metrics, provider, model, format] {
      const auto p = read_lines(*pred);
      const auto r = read_lines(*ref);
      if (p.size() != r.size()) {
        throw PreconditionError("prediction and reference files have " + std::to_string(p.size()) + " and " +
                                std::to_string(r.size()) + " lines");
      }
      const bool want_rouge = std::count(metrics->begin(), metrics->end(), "rouge") > 0;
      const bool want_bert = std::count(metrics->begin(), metrics->end(), "bert") > 0;
      std::unique_ptr<EmbeddingProvider> emb;
      if (want_bert) emb = make_embedding_provider(*provider, *model);
      std::vector<PairScores> scores;
      for (std::size_t i = 0; i < p.size(); ++i) {
        PairScores s;
        if (want_rouge) s.rouge = rouge(p[i], r[i]);
        if (want_bert) s.bert = bertscore(emb->embed_tokens(p[i]), emb->embed_tokens(r[i]));
        scores.push_back(s);
      }
      const auto report = aggregate_scores(scores);
      if (*format == "json") {
        c.out << metric_json(report).dump(2) << '\n';
        return kExitOk;
      }
      std::vector<std::string> header{"pair"};
      std::vector<Metric> cols;
      for (Metric m : kAllMetrics) {
        if (report[m]) {
          header.emplace_back(metric_name(m));
          cols.push_back(m);
        }
      }
      c.out << format_csv_row(header);
      for (std::size_t i = 0; i < scores.size(); ++i) {
        std::vector<std::string> row{std::to_string(i + 1)};
        for (Metric m : cols) row.push_back(format_double(metric_value(scores[i], m)));
        c.out << format_csv_row(row);
      }
      return kExitOk;
    };
  });
}

void add_readability(CLI::App& app, Commands& c) {
  auto* sub = app.add_subcommand("readability", "Lexicon readability profiles as JSON");
  auto file = std::make_shared<std::string>();
  auto reference = std::make_shared<std::string>();
  auto report = std::make_shared<std::string>();
  auto words = std::make_shared<std::string>();
  sub->add_option("file", *file, "JSONL with id/quote records, or plain text one per line")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--reference", *reference, "Reference table CSV to check against")->check(CLI::ExistingFile);
  sub->add_option("--report", *report, "Where to write the conformance report CSV (default stderr)");
  sub->add_option("--easy-words", *words, "Familiar-word list replacing the bundled one")->check(CLI::ExistingFile);
  sub->callback([&c, file, reference, report, words] {
    c.action = [&c, file, reference, report, words] {
      const EasyWords custom = words->empty() ? EasyWords{} : EasyWords::from_file(*words);
      const EasyWords& easy = words->empty() ? EasyWords::bundled() : custom;
      std::map<std::string, ReadabilityProfile> profiles;
      json arr = json::array();
      for (const auto& [id, text] : read_texts(*file)) {
        auto p = profile(text, easy);
        arr.push_back(profile_json(id, p));
        profiles.emplace(id, std::move(p));
      }
      c.out << arr.dump(2) << '\n';
      if (!reference->empty()) {
        const auto checks = conformance_checks(profiles, parse_reference_table(read_file(*reference)));
        const auto deviations =
            std::count_if(checks.begin(), checks.end(), [](const ConformanceCheck& k) { return !k.within; });
        const auto csv = conformance_report_csv(checks);
        if (report->empty()) {
          c.err << csv;
        } else {
          write_file_atomic(*report, csv);
        }
        c.err << deviations << " of " << checks.size() << " checks outside tolerance\n";
      }
      return kExitOk;
    };
  });
}

void add_agree(CLI::App& app, Commands& c) {
  auto* ag = app.add_subcommand("agree", "Agreement statistics over exported ratings");
  ag->require_subcommand(1);
  {
    auto* sub = ag->add_subcommand("alpha", "Krippendorff's alpha");
    auto matrix = std::make_shared<std::string>();
    auto ratings = std::make_shared<std::string>();
    auto scale = std::make_shared<std::string>("ordinal");
    auto labels = std::make_shared<bool>(false);
    auto* m = sub->add_option("--matrix", *matrix, "Items x observers CSV")->check(CLI::ExistingFile);
    auto* r = sub->add_option("--ratings", *ratings, "Label ratings CSV (expert,sentence,source,value)")
                  ->check(CLI::ExistingFile);
    m->excludes(r);
    sub->add_option("--scale", *scale, "nominal, ordinal or interval")
        ->check(CLI::IsMember({"nominal", "ordinal", "interval"}));
    sub->add_flag("--labels", *labels, "Matrix cells are category labels, not numbers");
    sub->callback([&c, matrix, ratings, scale, labels] {
      c.action = [&c, matrix, ratings, scale, labels] {
        RatingMatrix rm;
        if (!matrix->empty()) {
          rm = parse_rating_matrix(read_file(*matrix), *labels);
        } else if (!ratings->empty()) {
          const auto lr = parse_label_ratings(read_file(*ratings));
          rm = label_rating_matrix(lr);
        } else {
          throw PreconditionError("give --matrix or --ratings");
        }
        const auto res = krippendorff_alpha(rm.values, parse_scale(*scale));
        c.out << json{{"alpha", res.alpha},
                      {"scale", to_string(res.scale)},
                      {"units", res.units},
                      {"pairable_values", res.n_pairable},
                      {"observed_disagreement", res.observed_disagreement},
                      {"expected_disagreement", res.expected_disagreement}}
                     .dump(2)
              << '\n';
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ag->add_subcommand("dgs", "Deviation from the golden standard per source");
    auto ratings = std::make_shared<std::string>();
    auto difficulty = std::make_shared<std::string>();
    auto golden = std::make_shared<std::string>(kGoldenSource);
    auto source = std::make_shared<std::string>();
    auto cells = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>("json");
    auto exclude_self = std::make_shared<bool>(false);
    sub->add_option("--ratings", *ratings, "Label ratings CSV (expert,sentence,source,value)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--difficulty", *difficulty, "Difficulty ratings CSV (rater,sentence,level) for buckets")
        ->check(CLI::ExistingFile);
    sub->add_option("--golden", *golden, "Source id of the golden standard");
    sub->add_option("--source", *source, "Print only this source's average DGS");
    sub->add_option("--cells", *cells, "Write per-sentence values to this CSV");
    sub->add_option("--format", *format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_flag("--exclude-self", *exclude_self, "Ignore ratings experts gave their own labels");
    sub->callback([&c, ratings, difficulty, golden, source, cells, format, exclude_self] {
      c.action = [&c, ratings, difficulty, golden, source, cells, format, exclude_self] {
        const auto lr = parse_label_ratings(read_file(*ratings));
        std::vector<DifficultySummary> buckets;
        if (!difficulty->empty()) {
          const auto dr = parse_difficulty_ratings(read_file(*difficulty));
          buckets = summarize_difficulty(dr);
        }
        DgsOptions opt;
        opt.golden = *golden;
        opt.exclude_self_ratings = *exclude_self;
        const auto table = dgs_table(lr, buckets, opt);
        if (!cells->empty()) write_file_atomic(*cells, format_dgs_cells(table));
        if (!source->empty()) {
          auto it = table.sources.find(*source);
          if (it == table.sources.end()) throw NotFoundError("no ratings for source '" + *source + "'");
          if (!it->second.average) throw UndefinedDgsError("DGS of '" + *source + "' is undefined for every sentence");
          c.out << format_double(*it->second.average) << '\n';
          return kExitOk;
        }
        if (*format == "csv") {
          c.out << format_dgs_summary(table);
          return kExitOk;
        }
        json sources = json::object();
        for (const auto& [name, s] : table.sources) {
          json by_bucket = json::object();
          for (const auto& [b, v] : s.by_bucket) {
            by_bucket[std::string(to_string(b))] = {{"dgs", opt_json(v.first)}, {"sentences", v.second}};
          }
          sources[name] = {{"average_dgs", opt_json(s.average)},
                           {"defined", s.defined},
                           {"undefined_sentences", s.undefined_sentences},
                           {"by_bucket", by_bucket}};
        }
        c.out << json{{"golden", *golden}, {"sources", sources}}.dump(2) << '\n';
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ag->add_subcommand("correlate", "Pearson or Spearman correlation of two CSV columns");
    auto csv = std::make_shared<std::string>();
    auto x = std::make_shared<std::string>();
    auto y = std::make_shared<std::string>();
    auto method = std::make_shared<std::string>("pearson");
    sub->add_option("csv", *csv, "CSV file with a header row")->required()->check(CLI::ExistingFile);
    sub->add_option("--x", *x, "First column")->required();
    sub->add_option("--y", *y, "Second column")->required();
    sub->add_option("--method", *method, "pearson or spearman")->check(CLI::IsMember({"pearson", "spearman"}));
    sub->callback([&c, csv, x, y, method] {
      c.action = [&c, csv, x, y, method] {
        const CsvTable table(read_file(*csv));
        const int cx = table.require_column(*x), cy = table.require_column(*y);
        std::vector<double> xs, ys;
        for (const auto& row : table.rows()) {
          if (trim(row.at(cx)).empty() || trim(row.at(cy)).empty()) continue;
          xs.push_back(parse_double(row.at(cx)));
          ys.push_back(parse_double(row.at(cy)));
        }
        const auto m = parse_correlation(*method);
        const double r = correlate(xs, ys, m);
        c.out << json{{"method", to_string(m)}, {"r", r}, {"n", xs.size()}}.dump(2) << '\n';
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ag->add_subcommand("difficulty", "Mean difficulty and bucket per sentence");
    auto ratings = std::make_shared<std::string>();
    sub->add_option("--ratings", *ratings, "Difficulty ratings CSV (rater,sentence,level)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->callback([&c, ratings] {
      c.action = [&c, ratings] {
        const auto dr = parse_difficulty_ratings(read_file(*ratings));
        c.out << format_difficulty_summaries(summarize_difficulty(dr));
        return kExitOk;
      };
    });
  }
  {
    auto* sub = ag->add_subcommand("buckets", "Mean label rating per source and difficulty bucket");
    auto ratings = std::make_shared<std::string>();
    auto difficulty = std::make_shared<std::string>();
    sub->add_option("--ratings", *ratings, "Label ratings CSV")->required()->check(CLI::ExistingFile);
    sub->add_option("--difficulty", *difficulty, "Difficulty ratings CSV")->required()->check(CLI::ExistingFile);
    sub->callback([&c, ratings, difficulty] {
      c.action = [&c, ratings, difficulty] {
        const auto lr = parse_label_ratings(read_file(*ratings));
        const auto dr = parse_difficulty_ratings(read_file(*difficulty));
        const auto rows = ratings_by_bucket(lr, summarize_difficulty(dr));
        c.out << format_csv_row(std::vector<std::string>{"source", "bucket", "mean", "count"});
        for (const auto& r : rows) {
          c.out << format_csv_row(std::vector<std::string>{r.source, std::string(to_string(r.bucket)),
                                                           r.mean ? format_double(*r.mean) : "",
                                                           std::to_string(r.count)});
        }
        return kExitOk;
      };
    });
  }
}

void add_report(CLI::App& app, Commands& c) {
  auto* rp = app.add_subcommand("report", "Tables from finished runs");
  rp->require_subcommand(1);
  {
    auto* sub = rp->add_subcommand("conditions", "One row per (model, adaptation, prompt) condition");
    auto dir = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>("csv");
    sub->add_option("run_dir", *dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--format", *format, "csv or text")->check(CLI::IsMember({"csv", "text"}));
    sub->callback([&c, dir, format] {
      c.action = [&c, dir, format] {
        const auto rows = report_conditions(load_run(*dir));
        c.out << (*format == "text" ? format_conditions_text(rows) : format_conditions_csv(rows));
        return kExitOk;
      };
    });
  }
  {
    auto* sub = rp->add_subcommand("size-sweep", "BERTScore F1 against training-set size");
    auto runs = std::make_shared<std::vector<std::string>>();
    sub->add_option("--run", *runs, "SIZE=RUN_DIR, repeated")->required();
    sub->callback([&c, runs] {
      c.action = [&c, runs] {
        std::vector<std::pair<std::size_t, RunResult>> loaded;
        for (const auto& spec : *runs) {
          const auto eq = spec.find('=');
          if (eq == std::string::npos) throw PreconditionError("expected SIZE=RUN_DIR, got '" + spec + "'");
          const double size = parse_double(spec.substr(0, eq));
          if (size < 0 || size != static_cast<double>(static_cast<std::size_t>(size))) {
            throw PreconditionError("training size must be a non-negative integer: '" + spec + "'");
          }
          loaded.emplace_back(static_cast<std::size_t>(size), load_run(spec.substr(eq + 1)));
        }
        c.out << format_size_sweep_csv(report_size_sweep(loaded));
        return kExitOk;
      };
    });
  }
}

void add_prompt(CLI::App& app, Commands& c) {
  auto* pr = app.add_subcommand("prompt", "Prompt templates and output cleaning");
  pr->require_subcommand(1);
  {
    auto* sub = pr->add_subcommand("list", "List the built-in (or given) templates");
    auto file = std::make_shared<std::string>();
    sub->add_option("--templates", *file, "Template TSV (id, terminator, text)")->check(CLI::ExistingFile);
    sub->callback([&c, file] {
      c.action = [&c, file] {
        const auto ts = file->empty() ? builtin_templates() : load_templates(*file);
        json arr = json::array();
        for (const auto& t : ts) {
          arr.push_back({{"key", t.key()}, {"id", t.id}, {"terminator", to_string(t.terminator)}, {"instruction", t.instruction()}});
        }
        c.out << arr.dump(2) << '\n';
        return kExitOk;
      };
    });
  }
  {
    auto* sub = pr->add_subcommand("render", "Render the prompt for one quote");
    auto key = std::make_shared<std::string>("P1.period");
    auto file = std::make_shared<std::string>();
    auto quote = std::make_shared<std::string>();
    auto dataset = std::make_shared<std::string>();
    auto k = std::make_shared<int>(0);
    auto seed = std::make_shared<std::uint64_t>(kDefaultSeed);
    sub->add_option("--template", *key, "Template key, e.g. P3.linebreak");
    sub->add_option("--templates", *file, "Template TSV instead of the built-ins")->check(CLI::ExistingFile);
    sub->add_option("--quote", *quote, "Quote to code")->required();
    sub->add_option("--dataset", *dataset, "Exemplar pool (train split when tagged)")->check(CLI::ExistingFile);
    sub->add_option("-k,--shots", *k, "Number of exemplars: 0, 1, 3 or 5");
    sub->add_option("--seed", *seed, "Exemplar selection seed");
    sub->callback([&c, key, file, quote, dataset, k, seed] {
      c.action = [&c, key, file, quote, dataset, k, seed] {
        const auto ts = file->empty() ? builtin_templates() : load_templates(*file);
        const auto& t = find_template(ts, *key);
        FewShotConfig{*k, *seed}.validate();
        std::vector<QuoteCodePair> examples;
        if (*k > 0) {
          if (dataset->empty()) throw PreconditionError("--dataset is needed for k > 0");
          const auto d = load_dataset(*dataset, format_for_path(*dataset));
          auto pool = d.pairs_in(Split::train);
          if (pool.empty()) pool = d.pairs();
          examples = select_examples(pool, static_cast<std::size_t>(*k), *seed);
        }
        c.out << render_prompt(t, *quote, examples).text;
        return kExitOk;
      };
    });
  }
  {
    auto* sub = pr->add_subcommand("clean", "Reduce raw model output to a code");
    auto text = std::make_shared<std::string>();
    sub->add_option("--text", *text, "Raw output (default: read standard input)");
    sub->callback([&c, text] {
      c.action = [&c, text] {
        std::string raw = *text;
        if (raw.empty()) {
          std::ostringstream ss;
          ss << std::cin.rdbuf();
          raw = ss.str();
        }
        c.out << postprocess_code(raw) << '\n';
        return kExitOk;
      };
    });
  }
}

void add_serve(CLI::App& app, Commands& c) {
  auto* sub = app.add_subcommand("serve", "Annotation service (admin token from QC_ADMIN_TOKEN)");
  auto host = std::make_shared<std::string>("127.0.0.1");
  auto port = std::make_shared<int>(8080);
  auto data_dir = std::make_shared<std::string>("annotation-data");
  auto static_dir = std::make_shared<std::string>();
  auto fixture = std::make_shared<std::string>();
  auto raters = std::make_shared<std::vector<std::string>>(std::vector<std::string>{"E1", "E2", "E3"});
  auto seed = std::make_shared<std::uint64_t>(kDefaultSeed);
  sub->add_option("--host", *host, "Bind address");
  sub->add_option("--port", *port, "Port")->check(CLI::Range(0, 65535));
  sub->add_option("--data-dir", *data_dir, "Event log and snapshot directory");
  sub->add_option("--static-dir", *static_dir, "UI bundle served under /ui")->check(CLI::ExistingDirectory);
  sub->add_option("--fixture", *fixture, "Create project 'demo' from this quotes JSONL if absent")
      ->check(CLI::ExistingFile);
  sub->add_option("--raters", *raters, "Rater ids for the fixture project")->delimiter(',');
  sub->add_option("--seed", *seed, "Presentation-order seed for the fixture project");
  sub->callback([&c, host, port, data_dir, static_dir, fixture, raters, seed] {
    c.action = [&c, host, port, data_dir, static_dir, fixture, raters, seed] {
      AnnotationService service(ServiceOptions{*data_dir});
      if (!fixture->empty()) {
        try {
          service.stage("demo");
          spdlog::info("project 'demo' already exists");
        } catch (const NotFoundError&) {
          auto spec = fixture_project(*fixture, *raters);
          spec.seed = *seed;
          const auto created = service.create_project(spec);
          c.out << json{{"project", created.id}, {"rater_tokens", created.rater_tokens}}.dump(2) << '\n';
          c.out.flush();
        }
      }
      HttpServiceOptions opts;
      if (const char* t = std::getenv("QC_ADMIN_TOKEN")) opts.admin_token = t;
      if (opts.admin_token.empty()) spdlog::warn("QC_ADMIN_TOKEN is not set; admin routes will refuse every request");
      opts.static_dir = *static_dir;
      httplib::Server server;
      mount_annotation_api(server, service, opts);
      spdlog::info("listening on {}:{}", *host, *port);
      if (!server.listen(*host, *port)) throw IoError("cannot listen on " + *host + ":" + std::to_string(*port));
      return kExitOk;
    };
  });
}

void build(CLI::App& app, Commands& c) {
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  add_dataset(app, c);
  add_run(app, c);
  add_score(app, c);
  add_readability(app, c);
  add_agree(app, c);
  add_report(app, c);
  add_prompt(app, c);
  add_serve(app, c);
}

void collect(const CLI::App* app, const std::string& prefix, std::vector<std::string>& out) {
  const auto subs = app->get_subcommands([](const CLI::App*) { return true; });
  if (subs.empty()) {
    out.push_back(prefix);
    return;
  }
  for (const auto* s : subs) collect(s, prefix.empty() ? s->get_name() : prefix + " " + s->get_name(), out);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Commands c{out, err, {}};
  CLI::App app{"Qualitative coding harness: datasets, LLM runs, metrics, agreement and annotation", "qc"};
  build(app, c);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << '\n' << app.help();
    return kExitUsage;
  }
  if (!c.action) return kExitUsage;
  try {
    return c.action();
  } catch (const Error& e) {
    err << "error [" << e.kind() << "]: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kExitFailure;
}

std::vector<std::string> cli_commands() {
  std::ostringstream sink;
  Commands c{sink, sink, {}};
  CLI::App app{"qc", "qc"};
  build(app, c);
  std::vector<std::string> out;
  collect(&app, "", out);
  return out;
}

}  // namespace qc
