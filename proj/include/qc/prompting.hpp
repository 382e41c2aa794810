#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qc/corpus.hpp"

namespace qc {

enum class Terminator { period, linebreak };

std::string_view to_string(Terminator t);
Terminator parse_terminator(std::string_view text);

// An instruction stem plus the character sequence that closes it. Stems of
// declarative prompts carry no final punctuation; question stems keep their
// "?" and the period variant then adds nothing.
struct PromptTemplate {
  std::string id;
  std::string text;
  Terminator terminator = Terminator::period;

  // Stem followed by its terminator.
  std::string instruction() const;
  // "P1.period", "P3.linebreak", ...
  std::string key() const;

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

// The six open-coding prompts, each with both terminators (12 templates).
const std::vector<PromptTemplate>& builtin_templates();

// Tab-separated rows "id<TAB>terminator<TAB>text"; '#' starts a comment line.
std::vector<PromptTemplate> parse_templates(std::string_view text);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);

// Looks up "P3.linebreak" (or "P3", meaning the period variant).
const PromptTemplate& find_template(std::span<const PromptTemplate> templates, std::string_view key);

inline constexpr int kAllowedShotCounts[] = {0, 1, 3, 5};

struct FewShotConfig {
  int k = 0;
  std::uint64_t selection_seed = 0;

  // Throws PreconditionError unless k is 0, 1, 3 or 5.
  void validate() const;
};

struct RenderedPrompt {
  std::string text;
  std::string template_id;
  Terminator terminator = Terminator::period;
  std::vector<std::string> shot_ids;
};

inline constexpr std::string_view kExamplesLeadIn = "Here are examples:";

// Uniform sample of k pairs without replacement, in draw order.
std::vector<QuoteCodePair> select_examples(std::span<const QuoteCodePair> pool, std::size_t k,
                                           std::uint64_t seed);

// Layout:
//   <instruction>
//   [Here are examples:
//    Sentence: <q_1>
//    Code: <c_1>
//    ...]
//   Sentence: <quote>
//   Code:
RenderedPrompt render_prompt(const PromptTemplate& t, std::string_view quote,
                             std::span<const QuoteCodePair> examples);

// First non-blank line, trimmed, with matching outer quotes and trailing
// terminal punctuation removed. Idempotent. Throws EmptyGenerationError when
// nothing is left.
std::string postprocess_code(std::string_view raw);

}  // namespace qc
