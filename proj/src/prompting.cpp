#include "qc/prompting.hpp"

#include <algorithm>
#include <random>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

std::string_view to_string(Terminator t) {
  return t == Terminator::period ? "period" : "linebreak";
}

Terminator parse_terminator(std::string_view text) {
  auto t = trim(text);
  if (t == "period" || t == ".") return Terminator::period;
  if (t == "linebreak" || t == "newline" || t == "\\n") return Terminator::linebreak;
  throw ConfigError("unknown terminator '" + std::string(t) + "' (expected period or linebreak)");
}

std::string PromptTemplate::instruction() const {
  if (terminator == Terminator::linebreak) return text + "\n";
  if (!text.empty() && (text.back() == '.' || text.back() == '?' || text.back() == '!')) return text;
  return text + ".";
}

std::string PromptTemplate::key() const { return id + "." + std::string(to_string(terminator)); }

const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = [] {
    const std::pair<const char*, const char*> stems[] = {
        {"P1", "Summarize the main idea of a sentence"},
        {"P2", "Can you tell me what the main idea of this sentence is in just a few words?"},
        {"P3",
         "From the perspective of a social scientist, summarize the following sentence as you "
         "would in thematic coding"},
        {"P4",
         "If you were a social scientist doing thematic analysis, what code would you give to "
         "this citation?"},
        {"P5", "Explain in a couple of words the primary thought expressed in the following text"},
        {"P6", "What is the gist of this sentence?"},
    };
    std::vector<PromptTemplate> out;
    for (const auto& [id, text] : stems) {
      out.push_back({id, text, Terminator::period});
      out.push_back({id, text, Terminator::linebreak});
    }
    return out;
  }();
  return templates;
}

std::vector<PromptTemplate> parse_templates(std::string_view text) {
  std::vector<PromptTemplate> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw ConfigError("templates line " + std::to_string(line_no) +
                        ": expected id<TAB>terminator<TAB>text");
    }
    PromptTemplate t;
    t.id = std::string(trim(line.substr(0, t1)));
    t.terminator = parse_terminator(line.substr(t1 + 1, t2 - t1 - 1));
    t.text = std::string(trim(line.substr(t2 + 1)));
    if (t.id.empty() || t.text.empty()) {
      throw ConfigError("templates line " + std::to_string(line_no) + ": empty id or text");
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  return parse_templates(read_file(path));
}

const PromptTemplate& find_template(std::span<const PromptTemplate> templates,
                                    std::string_view key) {
  std::string wanted(key);
  if (wanted.find('.') == std::string::npos) wanted += ".period";
  for (const auto& t : templates) {
    if (t.key() == wanted) return t;
  }
  throw ConfigError("unknown prompt template '" + std::string(key) + "'");
}

void FewShotConfig::validate() const {
  if (std::find(std::begin(kAllowedShotCounts), std::end(kAllowedShotCounts), k) ==
      std::end(kAllowedShotCounts)) {
    throw PreconditionError("shot count must be one of 0, 1, 3, 5 (got " + std::to_string(k) + ")");
  }
}

std::vector<QuoteCodePair> select_examples(std::span<const QuoteCodePair> pool, std::size_t k,
                                           std::uint64_t seed) {
  if (k > pool.size()) {
    throw PreconditionError("cannot draw " + std::to_string(k) + " examples from a pool of " +
                            std::to_string(pool.size()));
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Partial Fisher-Yates from the front: the first k slots are the draw order.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    auto j = i + static_cast<std::size_t>(uniform_below(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<QuoteCodePair> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[order[i]]);
  return out;
}

RenderedPrompt render_prompt(const PromptTemplate& t, std::string_view quote,
                             std::span<const QuoteCodePair> examples) {
  if (trim(quote).empty()) throw PreconditionError("cannot render a prompt for an empty quote");
  RenderedPrompt out;
  out.template_id = t.id;
  out.terminator = t.terminator;
  std::string text = t.instruction();
  text += '\n';
  if (!examples.empty()) {
    text += kExamplesLeadIn;
    text += '\n';
    for (const auto& ex : examples) {
      text += "Sentence: " + ex.quote + "\nCode: " + ex.code + "\n";
      out.shot_ids.push_back(ex.id);
    }
  }
  text += "Sentence: ";
  text += quote;
  text += "\nCode:";
  out.text = std::move(text);
  return out;
}

namespace {

bool is_terminal_punct(char32_t cp) {
  return cp == U'.' || cp == U'!' || cp == U'?' || cp == U';' || cp == U':' || cp == U',' ||
         cp == 0x2026;
}

char32_t closing_quote_for(char32_t open) {
  switch (open) {
    case U'"':
      return U'"';
    case U'\'':
      return U'\'';
    case U'`':
      return U'`';
    case 0x201C:
      return 0x201D;
    case 0x2018:
      return 0x2019;
    case 0x00AB:
      return 0x00BB;
    default:
      return 0;
  }
}

std::string encode(std::span<const char32_t> cps) {
  std::string out;
  for (char32_t c : cps) append_utf8(out, c);
  return out;
}

}  // namespace

std::string postprocess_code(std::string_view raw) {
  std::string_view line;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    auto candidate = trim(raw.substr(start, end - start));
    if (!candidate.empty()) {
      line = candidate;
      break;
    }
    if (end == raw.size()) break;
    start = end + 1;
  }

  std::vector<char32_t> cps = decode_utf8(line);
  bool changed = true;
  while (changed && !cps.empty()) {
    changed = false;
    while (!cps.empty() && is_space(cps.front())) {
      cps.erase(cps.begin());
      changed = true;
    }
    while (!cps.empty() && is_space(cps.back())) {
      cps.pop_back();
      changed = true;
    }
    if (cps.size() >= 2) {
      char32_t close = closing_quote_for(cps.front());
      if (close != 0 && cps.back() == close) {
        cps.erase(cps.begin());
        cps.pop_back();
        changed = true;
      }
    }
    while (!cps.empty() && is_terminal_punct(cps.back())) {
      cps.pop_back();
      changed = true;
    }
  }
  if (cps.empty()) throw EmptyGenerationError("model output is empty after cleaning");
  return encode(cps);
}

}  // namespace qc
