#include "nodalprice/scenario_toml.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace nodal::toml {

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw ParseError(origin + ":" + std::to_string(line) + ": " + what);
}

std::string trimmed(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

Value parse_value(const std::string& raw, const std::string& origin, int line) {
  Value v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.kind = Value::Kind::Str;
    v.str = raw.substr(1, raw.size() - 2);
    if (v.str.find('"') != std::string::npos)
      fail(origin, line, "embedded quotes are not supported: " + raw);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = Value::Kind::Bool;
    v.flag = (raw == "true");
    return v;
  }
  const char* begin = raw.c_str();
  char* end = nullptr;
  v.kind = Value::Kind::Num;
  v.num = std::strtod(begin, &end);
  if (end != begin + raw.size() || raw.empty())
    fail(origin, line, "expected a string, number, or boolean, got: " + raw);
  return v;
}

}  // namespace

const Value& Table::require(const std::string& key, const std::string& where) const {
  auto it = entries.find(key);
  if (it == entries.end()) throw ParseError("missing key '" + key + "' in [" + where + "]");
  return it->second;
}

std::string Table::get_str(const std::string& key, const std::string& where) const {
  const Value& v = require(key, where);
  if (v.kind != Value::Kind::Str)
    throw ParseError("key '" + key + "' in [" + where + "] must be a string");
  return v.str;
}

double Table::get_num(const std::string& key, const std::string& where) const {
  const Value& v = require(key, where);
  if (v.kind != Value::Kind::Num)
    throw ParseError("key '" + key + "' in [" + where + "] must be a number");
  return v.num;
}

bool Table::get_bool(const std::string& key, const std::string& where) const {
  const Value& v = require(key, where);
  if (v.kind != Value::Kind::Bool)
    throw ParseError("key '" + key + "' in [" + where + "] must be a boolean");
  return v.flag;
}

std::string Table::get_str_or(const std::string& key, const std::string& fallback) const {
  auto it = entries.find(key);
  return it == entries.end() ? fallback : get_str(key, "?");
}

double Table::get_num_or(const std::string& key, double fallback) const {
  auto it = entries.find(key);
  return it == entries.end() ? fallback : get_num(key, "?");
}

bool Table::get_bool_or(const std::string& key, bool fallback) const {
  auto it = entries.find(key);
  return it == entries.end() ? fallback : get_bool(key, "?");
}

const Table& Document::table(const std::string& name) const {
  auto it = tables.find(name);
  if (it == tables.end()) throw ParseError("missing section [" + name + "]");
  return it->second;
}

const std::vector<Table>& Document::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw ParseError("missing section [[" + name + "]]");
  return it->second;
}

Document parse(const std::string& text, const std::string& origin) {
  Document doc;
  Table* current = nullptr;
  std::string current_name = "(root)";
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trimmed(strip_comment(raw));
    if (line.empty()) continue;

    if (line.size() >= 4 && line.substr(0, 2) == "[[" &&
        line.substr(line.size() - 2) == "]]") {
      const std::string name = trimmed(line.substr(2, line.size() - 4));
      if (!valid_key(name)) fail(origin, line_no, "bad array-of-tables name: " + line);
      doc.arrays[name].emplace_back();
      current = &doc.arrays[name].back();
      current_name = name;
      continue;
    }
    if (line.front() == '[' && line.back() == ']') {
      const std::string name = trimmed(line.substr(1, line.size() - 2));
      if (!valid_key(name)) fail(origin, line_no, "bad table name: " + line);
      if (doc.tables.count(name)) fail(origin, line_no, "duplicate table [" + name + "]");
      current = &doc.tables[name];
      current_name = name;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value, got: " + line);
    const std::string key = trimmed(line.substr(0, eq));
    if (!valid_key(key)) fail(origin, line_no, "bad key: '" + key + "'");
    if (!current) fail(origin, line_no, "key '" + key + "' appears before any [section]");
    if (current->entries.count(key))
      fail(origin, line_no, "duplicate key '" + key + "' in [" + current_name + "]");
    (*current).entries[key] = parse_value(trimmed(line.substr(eq + 1)), origin, line_no);
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

}  // namespace nodal::toml
