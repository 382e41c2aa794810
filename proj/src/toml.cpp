#include "qc/toml.hpp"

#include <cctype>
#include <charconv>
#include <string>

#include "qc/error.hpp"
#include "qc/util.hpp"

namespace qc {

using nlohmann::json;

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = header(root);
      } else {
        key_value(*table);
      }
      end_of_line();
    }
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  char get() {
    char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
  }

  void skip_spaces() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (peek() == '\r') ++pos_;
      if (peek() == '\n') {
        get();
        continue;
      }
      break;
    }
  }
  // Whitespace, comments and newlines inside arrays.
  void skip_array_space() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        get();
        continue;
      }
      break;
    }
  }
  void end_of_line() {
    skip_spaces();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (eof()) return;
    if (peek() != '\n') fail("unexpected text after value");
    get();
  }

  std::string key() {
    skip_spaces();
    std::string k;
    if (peek() == '"' || peek() == '\'') {
      k = peek() == '"' ? basic_string() : literal_string();
      skip_spaces();
      return k;
    }
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      k.push_back(get());
    }
    if (k.empty()) fail("expected a key");
    skip_spaces();
    return k;
  }

  json* header(json& root) {
    get();  // '['
    const bool array = peek() == '[';
    if (array) get();
    std::vector<std::string> path;
    while (true) {
      path.push_back(key());
      skip_spaces();
      if (peek() == '.') {
        get();
        continue;
      }
      break;
    }
    if (peek() != ']') fail("expected ']'");
    get();
    if (array) {
      if (peek() != ']') fail("expected ']]'");
      get();
    }
    json* node = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      const bool last = i + 1 == path.size();
      json& child = (*node)[path[i]];
      if (last && array) {
        if (child.is_null()) child = json::array();
        if (!child.is_array()) fail("'" + path[i] + "' is not an array of tables");
        child.push_back(json::object());
        return &child.back();
      }
      if (child.is_null()) child = json::object();
      if (child.is_array()) {
        if (child.empty()) fail("empty array of tables '" + path[i] + "'");
        node = &child.back();
      } else if (child.is_object()) {
        node = &child;
      } else {
        fail("'" + path[i] + "' is already a value");
      }
    }
    return node;
  }

  void key_value(json& table) {
    const std::string k = key();
    if (peek() != '=') fail("expected '=' after key '" + k + "'");
    get();
    skip_spaces();
    if (table.contains(k)) fail("duplicate key '" + k + "'");
    table[k] = value();
  }

  json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return number();
  }

  json array() {
    get();  // '['
    json out = json::array();
    while (true) {
      skip_array_space();
      if (peek() == ']') {
        get();
        return out;
      }
      out.push_back(value());
      skip_array_space();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() == ']') {
        get();
        return out;
      }
      fail("expected ',' or ']' in array");
    }
  }

  json number() {
    std::string text;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_')) {
      char c = get();
      if (c != '_') text.push_back(c);
    }
    if (text.empty()) fail("expected a value");
    const bool is_float = text.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      long long v = 0;
      const char* first = text.data() + (text[0] == '+' ? 1 : 0);
      auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) fail("invalid integer '" + text + "'");
      return v;
    }
    try {
      return parse_double(text);
    } catch (const Error&) {
      fail("invalid number '" + text + "'");
    }
  }

  std::string literal_string() {
    get();
    std::string out;
    while (!eof() && peek() != '\'' && peek() != '\n') out.push_back(get());
    if (peek() != '\'') fail("unterminated string");
    get();
    return out;
  }

  std::string basic_string() {
    get();
    std::string out;
    while (!eof() && peek() != '"') {
      char c = get();
      if (c == '\n') fail("unterminated string");
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (eof()) fail("unterminated escape");
      char e = get();
      switch (e) {
        case 'n':
          out.push_back('\n');
          break;
        case 't':
          out.push_back('\t');
          break;
        case 'r':
          out.push_back('\r');
          break;
        case '"':
          out.push_back('"');
          break;
        case '\\':
          out.push_back('\\');
          break;
        case 'u': {
          if (pos_ + 4 > s_.size()) fail("short \\u escape");
          unsigned cp = 0;
          auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, cp, 16);
          if (ec != std::errc() || ptr != s_.data() + pos_ + 4) fail("bad \\u escape");
          pos_ += 4;
          append_utf8(out, static_cast<char32_t>(cp));
          break;
        }
        default:
          fail(std::string("unknown escape '\\") + e + "'");
      }
    }
    if (eof()) fail("unterminated string");
    get();
    return out;
  }
};

}  // namespace

json parse_toml(std::string_view text) { return Parser(text).parse(); }

}  // namespace qc
