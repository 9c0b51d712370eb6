#include "toml_lite.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace toml_lite {

using nlohmann::json;

namespace {

bool is_bare_key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }

class Cursor {
 public:
  Cursor(const std::string& s, int line) : s_(s), line_(line) {}

  [[noreturn]] void error(const std::string& what) const {
    throw ParseError("line " + std::to_string(line_) + ": " + what);
  }
  bool done() const { return i_ >= s_.size(); }
  char peek() const { return done() ? '\0' : s_[i_]; }
  char take() { return done() ? '\0' : s_[i_++]; }
  void skip_ws() {
    while (!done() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  void expect(char c) {
    if (take() != c) error(std::string("expected '") + c + "'");
  }
  // Only whitespace or a comment may follow.
  void expect_end() {
    skip_ws();
    if (!done() && peek() != '#') error("unexpected trailing characters");
  }

  std::string bare_key() {
    const std::size_t start = i_;
    while (!done() && is_bare_key_char(s_[i_])) ++i_;
    if (start == i_) error("expected a key");
    return s_.substr(start, i_ - start);
  }

  json value() {
    skip_ws();
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == 't' || c == 'f') return boolean();
    return number();
  }

 private:
  json basic_string() {
    expect('"');
    std::string out;
    for (;;) {
      if (done()) error("unterminated string");
      char c = take();
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      switch (take()) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: error("unsupported escape sequence");
      }
    }
  }

  json literal_string() {
    expect('\'');
    const std::size_t end = s_.find('\'', i_);
    if (end == std::string::npos) error("unterminated string");
    std::string out = s_.substr(i_, end - i_);
    i_ = end + 1;
    return out;
  }

  json array() {
    expect('[');
    json out = json::array();
    for (;;) {
      skip_ws();
      if (peek() == ']') {
        take();
        return out;
      }
      out.push_back(value());
      skip_ws();
      if (peek() == ',') {
        take();
      } else if (peek() != ']') {
        error("expected ',' or ']' in array");
      }
    }
  }

  json boolean() {
    for (const char* word : {"true", "false"}) {
      const std::size_t n = std::char_traits<char>::length(word);
      if (s_.compare(i_, n, word) == 0 && (i_ + n >= s_.size() || !is_bare_key_char(s_[i_ + n]))) {
        i_ += n;
        return word[0] == 't';
      }
    }
    error("invalid value");
  }

  json number() {
    const std::size_t start = i_;
    while (!done() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '+' || s_[i_] == '-' ||
                       s_[i_] == '.' || s_[i_] == '_'))
      ++i_;
    std::string tok = s_.substr(start, i_ - start);
    if (tok.empty()) error("expected a value");
    if (tok.find('_') != std::string::npos) error("digit separators are not supported: " + tok);
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* last = tok.data() + tok.size();
    if (is_float) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last || !std::isfinite(v)) error("invalid number: " + tok);
      return v;
    }
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) error("invalid value: " + tok);
    return v;
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_;
};

json* table_at(json& root, const std::string& dotted, Cursor& cur) {
  json* node = &root;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), is_bare_key_char)) cur.error("invalid table name");
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) cur.error("'" + part + "' is not a table");
    node = &next;
  }
  return node;
}

}  // namespace

json parse(const std::string& text) {
  json root = json::object();
  json* table = &root;
  std::vector<std::string> defined_tables;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Cursor cur(line, lineno);
    cur.skip_ws();
    if (cur.done() || cur.peek() == '#') continue;
    if (cur.peek() == '[') {
      cur.take();
      if (cur.peek() == '[') cur.error("arrays of tables are not supported");
      cur.skip_ws();
      std::string name;
      while (!cur.done() && cur.peek() != ']' && cur.peek() != ' ' && cur.peek() != '\t') name += cur.take();
      cur.skip_ws();
      cur.expect(']');
      cur.expect_end();
      if (std::find(defined_tables.begin(), defined_tables.end(), name) != defined_tables.end())
        cur.error("table [" + name + "] defined twice");
      defined_tables.push_back(name);
      table = table_at(root, name, cur);
      continue;
    }
    const std::string key = cur.bare_key();
    cur.skip_ws();
    if (cur.peek() == '.') cur.error("dotted keys are not supported; use a [table] header");
    cur.expect('=');
    json v = cur.value();
    cur.expect_end();
    if (table->contains(key)) cur.error("duplicate key '" + key + "'");
    (*table)[key] = std::move(v);
  }
  return root;
}

json parse_value(const std::string& text) {
  Cursor cur(text, 0);
  try {
    json v = cur.value();
    cur.expect_end();
    return v;
  } catch (const ParseError&) {
    if (!text.empty() && std::all_of(text.begin(), text.end(), is_bare_key_char)) return text;
    throw ParseError("cannot parse value '" + text + "'");
  }
}

void set_path(json& root, const std::string& dotted, json value) {
  json* node = &root;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ParseError("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ParseError("'" + parts[i] + "' is not a table");
    node = &next;
  }
  (*node)[parts.back()] = std::move(value);
}

}  // namespace toml_lite
