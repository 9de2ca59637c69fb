#pragma once

#include <map>
#include <string>
#include <vector>

#include "nodalprice/common.hpp"

namespace nodal::toml {

// Minimal TOML reader covering what scenario files use: `[table]` headers,
// `[[array-of-tables]]` headers, and `key = value` pairs where the value is a
// double-quoted string, a number, or a boolean. `#` starts a comment.

struct ParseError : Error { using Error::Error; };

struct Value {
  enum class Kind { Str, Num, Bool } kind = Kind::Num;
  std::string str;
  double num = 0.0;
  bool flag = false;
};

struct Table {
  std::map<std::string, Value> entries;

  bool has(const std::string& key) const { return entries.count(key) != 0; }

  // Typed accessors; `where` names the table in error messages.
  const Value& require(const std::string& key, const std::string& where) const;
  std::string get_str(const std::string& key, const std::string& where) const;
  double get_num(const std::string& key, const std::string& where) const;
  bool get_bool(const std::string& key, const std::string& where) const;
  std::string get_str_or(const std::string& key, const std::string& fallback) const;
  double get_num_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
};

struct Document {
  std::map<std::string, Table> tables;               // [name]
  std::map<std::string, std::vector<Table>> arrays;  // [[name]]

  bool has_table(const std::string& name) const { return tables.count(name) != 0; }
  const Table& table(const std::string& name) const;
  const std::vector<Table>& array(const std::string& name) const;
};

Document parse(const std::string& text, const std::string& origin = "<string>");
Document parse_file(const std::string& path);

}  // namespace nodal::toml
