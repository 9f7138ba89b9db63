#include "activemark/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <string>
#include <vector>

#include "activemark/bytes.hpp"
#include "activemark/errors.hpp"

namespace activemark {

using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (at_end()) break;
      if (peek() == '[') {
        ++pos_;
        if (!at_end() && peek() == '[') fail("arrays of tables are not supported");
        skip_spaces();
        auto path = parse_key_path();
        skip_spaces();
        expect(']');
        table = &descend(root, path);
        end_of_line();
        continue;
      }
      auto path = parse_key_path();
      skip_spaces();
      expect('=');
      skip_spaces();
      json value = parse_value();
      json& parent = descend(*table, {path.begin(), path.end() - 1});
      if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
      parent[path.back()] = std::move(value);
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("TOML line " + std::to_string(line_) + ": " + msg);
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_spaces() {
    while (!at_end() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (!at_end() && peek() == '#') {
      while (!at_end() && peek() != '\n') ++pos_;
    }
  }

  void newline() {
    if (!at_end() && peek() == '\r') ++pos_;
    if (!at_end() && peek() == '\n') {
      ++pos_;
      ++line_;
    }
  }

  /// Spaces, comments and newlines (inside arrays and between statements).
  void skip_blank_lines() {
    while (true) {
      skip_spaces();
      skip_comment();
      if (!at_end() && (peek() == '\n' || peek() == '\r')) {
        newline();
        continue;
      }
      return;
    }
  }

  void end_of_line() {
    skip_spaces();
    skip_comment();
    if (at_end()) return;
    if (peek() != '\n' && peek() != '\r') fail("unexpected text after value");
    newline();
  }

  std::string parse_key() {
    if (!at_end() && (peek() == '"' || peek() == '\'')) return parse_string();
    std::string key;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      key.push_back(peek());
      ++pos_;
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    while (true) {
      skip_spaces();
      if (at_end() || peek() != '.') break;
      ++pos_;
      skip_spaces();
      path.push_back(parse_key());
    }
    return path;
  }

  json& descend(json& from, const std::vector<std::string>& path) {
    json* cur = &from;
    for (const auto& k : path) {
      if (!cur->contains(k)) (*cur)[k] = json::object();
      cur = &(*cur)[k];
      if (!cur->is_object()) fail("'" + k + "' is already a value, not a table");
    }
    return *cur;
  }

  std::string parse_string() {
    const char quote = peek();
    ++pos_;
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      char c = peek();
      ++pos_;
      if (c == quote) break;
      if (c == '\\' && quote == '"') {
        if (at_end()) fail("unterminated escape");
        char e = peek();
        ++pos_;
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: fail(std::string("unsupported escape '\\") + e + "'");
        }
        continue;
      }
      out.push_back(c);
    }
    return out;
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_blank_lines();
      if (at_end()) fail("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_blank_lines();
      if (!at_end() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_blank_lines();
      expect(']');
      return arr;
    }
  }

  json parse_inline_table() {
    expect('{');
    json obj = json::object();
    skip_spaces();
    if (!at_end() && peek() == '}') {
      ++pos_;
      return obj;
    }
    while (true) {
      skip_spaces();
      auto path = parse_key_path();
      skip_spaces();
      expect('=');
      skip_spaces();
      json& parent = descend(obj, {path.begin(), path.end() - 1});
      if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
      parent[path.back()] = parse_value();
      skip_spaces();
      if (!at_end() && peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return obj;
    }
  }

  json parse_scalar() {
    std::string tok;
    while (!at_end()) {
      char c = peek();
      if (c == ',' || c == ']' || c == '}' || c == '#' || c == ' ' || c == '\t' || c == '\n' || c == '\r') break;
      tok.push_back(c);
      ++pos_;
    }
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string clean;
    for (char c : tok) {
      if (c != '_') clean.push_back(c);
    }
    const bool is_float = clean.find_first_of(".eE") != std::string::npos || clean == "inf" || clean == "+inf" ||
                          clean == "-inf" || clean == "nan";
    const char* first = clean.data();
    const char* last = clean.data() + clean.size();
    if (!is_float) {
      if (!clean.empty() && clean[0] == '+') ++first;
      if (!clean.empty() && clean[0] == '-') {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(first, last, v);
        if (ec == std::errc() && p == last) return v;
      } else {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(first, last, v);
        if (ec == std::errc() && p == last) return v;
      }
      fail("invalid value '" + tok + "'");
    }
    if (!clean.empty() && clean[0] == '+') ++first;
    double v = 0.0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) fail("invalid number '" + tok + "'");
    return v;
  }

  json parse_value() {
    if (at_end()) fail("expected a value");
    switch (peek()) {
      case '"':
      case '\'': return parse_string();
      case '[': return parse_array();
      case '{': return parse_inline_table();
      default: return parse_scalar();
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

json load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json out;
  if (path.extension() == ".toml") {
    out = parse_toml(text);
  } else {
    try {
      out = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
  }
  if (!out.is_object()) throw ConfigError("config '" + path.string() + "' must be a table/object at the top level");
  return out;
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("ACTIVEMARK_SEED");
  if (!raw || !*raw) return std::nullopt;
  std::string_view s(raw);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("ACTIVEMARK_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  }
  return v;
}

const json* config_lookup(const json& config, std::string_view dotted) {
  const json* cur = &config;
  while (true) {
    const auto dot = dotted.find('.');
    const std::string key(dotted.substr(0, dot));
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) return cur;
    dotted.remove_prefix(dot + 1);
  }
}

}  // namespace activemark
