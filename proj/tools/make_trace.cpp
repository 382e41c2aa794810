// Fills the response cache of a config with synthetic completions, so the run
// can later be replayed offline. Usage: qc_make_trace <config.toml> [run dir]
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <random>

#include "qc/error.hpp"
#include "qc/experiment.hpp"
#include "qc/util.hpp"

namespace {

const char* kDistractors[] = {"general feedback", "experience", "technology", "opinion", "mixed feelings",
                              "daily life",       "product",    "service",    "frustration", "satisfaction"};

// Quality-dependent mix of exact, partial and unrelated answers, with the
// formatting noise real models add around the code.
class SyntheticClient : public qc::ChatClient {
 public:
  explicit SyntheticClient(std::map<std::string, std::string> golden) : golden_(std::move(golden)) {}

  std::string complete(const qc::ModelEndpoint& endpoint, const std::string& prompt) override {
    const std::string quote = qc::target_quote(prompt);
    auto it = golden_.find(quote);
    const std::string gold = it == golden_.end() ? "unknown" : it->second;
    std::mt19937_64 rng(qc::fnv1a64(endpoint.model_id + "\x1f" + prompt));
    const double quality = quality_for(endpoint);
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const auto pick = [&] { return std::string(kDistractors[qc::uniform_below(rng, std::size(kDistractors))]); };
    std::string code;
    if (u < quality) {
      code = gold;
    } else if (u < quality + 0.25) {
      code = gold.substr(0, gold.find(' ')) + " " + pick();
    } else {
      code = pick();
    }
    switch (qc::uniform_below(rng, 4)) {
      case 0:
        return code;
      case 1:
        return code + ".";
      case 2:
        return "\"" + code + "\"\nThe sentence is mainly about this.";
      default:
        return "  " + code + "\n";
    }
  }

 private:
  static double quality_for(const qc::ModelEndpoint& e) {
    double q = 0.25;
    if (e.parameters == "13B") q += 0.1;
    if (e.parameters == "47B" || e.parameters == "70B") q += 0.2;
    if (e.finetuned) q += 0.3;
    return q;
  }

  std::map<std::string, std::string> golden_;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: qc_make_trace <config.toml> [run dir]\n";
    return 2;
  }
  try {
    auto config = qc::load_config(argv[1]);
    config.output_dir = argc > 2 ? std::filesystem::path(argv[2])
                                 : std::filesystem::temp_directory_path() / "qc_make_trace";
    config.concurrency = 1;
    const auto plan = qc::plan_run(config);
    std::map<std::string, std::string> golden;
    for (const auto& p : plan.dataset.pairs()) golden.emplace(p.quote, p.code);
    qc::RunOptions options;
    options.client = std::make_shared<SyntheticClient>(golden);
    const auto result = qc::run(config, options);
    std::cout << "recorded " << result.cache.network_calls << " responses into " << config.cache_dir.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
