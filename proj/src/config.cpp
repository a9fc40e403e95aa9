#include "nwflow/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "nwflow/io.hpp"

namespace nwflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

/// Removes a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

bool parse_number(const std::string& text, Config::Number& out) {
  std::string t = text;
  t.erase(std::remove(t.begin(), t.end(), '_'), t.end());
  if (t.empty()) return false;
  std::size_t start = (t[0] == '+') ? 1 : 0;
  double v = 0.0;
  const auto res = std::from_chars(t.data() + start, t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) return false;
  if (!std::isfinite(v)) return false;
  out.value = v;
  out.integral = t.find_first_of(".eE") == std::string::npos;
  return true;
}

Config::Value parse_value(const std::string& raw, const std::string& where, bool bare_string_ok) {
  const std::string text = trim(raw);
  if (text.empty()) throw ConfigError(where + ": missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError(where + ": unterminated string");
    std::string s;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        const char c = text[++i];
        s += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        s += text[i];
      }
    }
    return s;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  if (text.front() == '[') {
    if (text.back() != ']') throw ConfigError(where + ": unterminated array");
    Config::Array arr;
    const std::string body = trim(text.substr(1, text.size() - 2));
    if (!body.empty()) {
      std::stringstream ss(body);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        Config::Number n;
        if (!parse_number(item, n)) throw ConfigError(where + ": arrays may only hold numbers, got '" + item + "'");
        arr.push_back(n);
      }
    }
    return arr;
  }
  Config::Number n;
  if (parse_number(text, n)) return n;
  if (bare_string_ok) return text;
  throw ConfigError(where + ": cannot parse value '" + text + "'");
}

const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::integer: return "integer";
    case ValueType::real: return "number";
    case ValueType::boolean: return "boolean";
    case ValueType::string: return "string";
    case ValueType::real_array: return "array of numbers";
    case ValueType::int_array: return "array of integers";
  }
  return "?";
}

bool matches(const Config::Value& v, ValueType t) {
  switch (t) {
    case ValueType::integer: return std::holds_alternative<Config::Number>(v) && std::get<Config::Number>(v).integral;
    case ValueType::real: return std::holds_alternative<Config::Number>(v);
    case ValueType::boolean: return std::holds_alternative<bool>(v);
    case ValueType::string: return std::holds_alternative<std::string>(v);
    case ValueType::real_array: return std::holds_alternative<Config::Array>(v);
    case ValueType::int_array: {
      if (!std::holds_alternative<Config::Array>(v)) return false;
      for (const auto& n : std::get<Config::Array>(v)) {
        if (!n.integral) return false;
      }
      return true;
    }
  }
  return false;
}

std::string render(const Config::Value& v) {
  if (const auto* n = std::get_if<Config::Number>(&v)) {
    if (n->integral) return std::to_string(static_cast<long long>(n->value));
    std::string s = format_double(n->value);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }
  if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (const auto* s = std::get_if<std::string>(&v)) {
    std::string out = "\"";
    for (char c : *s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + "\"";
  }
  const auto& arr = std::get<Config::Array>(v);
  std::string out = "[";
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (i) out += ", ";
    out += render(Config::Value(arr[i]));
  }
  return out + "]";
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::string table;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError(where + ": malformed table header");
      table = trim(s.substr(1, s.size() - 2));
      if (!valid_key(table)) throw ConfigError(where + ": invalid table name '" + table + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    const std::string full = table.empty() ? key : table + "." + key;
    if (cfg.entries_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    cfg.entries_.insert_or_assign(full, Entry{parse_value(s.substr(eq + 1), where, false), where});
  }
  return cfg;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set '" + assignment + "': expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (!valid_key(key)) throw ConfigError("--set '" + assignment + "': invalid key");
  const std::string where = "--set " + key;
  entries_.insert_or_assign(key, Entry{parse_value(assignment.substr(eq + 1), where, true), where});
}

void Config::resolve(const std::vector<KeyInfo>& schema) {
  for (const auto& [key, e] : entries_) {
    const KeyInfo* info = nullptr;
    for (const auto& k : schema) {
      if (k.key == key) info = &k;
    }
    if (!info) {
      std::string valid;
      for (const auto& k : schema) valid += (valid.empty() ? "" : ", ") + k.key;
      throw ConfigError(e.origin + ": unknown key '" + key + "' (valid keys: " + valid + ")");
    }
    if (!matches(e.value, info->type)) {
      throw ConfigError(e.origin + ": key '" + key + "' expects " + type_name(info->type) + ", got " + render(e.value));
    }
  }
  for (const auto& k : schema) {
    if (entries_.count(k.key)) continue;
    entries_.insert_or_assign(k.key, Entry{parse_value(k.default_text, "default for " + k.key, false), "default"});
  }
}

const Config::Entry& Config::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

long long Config::get_int(const std::string& key) const {
  const auto& e = entry(key);
  const auto* n = std::get_if<Number>(&e.value);
  if (!n || !n->integral) throw ConfigError(e.origin + ": key '" + key + "' expects integer");
  return static_cast<long long>(n->value);
}

double Config::get_real(const std::string& key) const {
  const auto& e = entry(key);
  const auto* n = std::get_if<Number>(&e.value);
  if (!n) throw ConfigError(e.origin + ": key '" + key + "' expects number");
  return n->value;
}

bool Config::get_bool(const std::string& key) const {
  const auto& e = entry(key);
  const auto* b = std::get_if<bool>(&e.value);
  if (!b) throw ConfigError(e.origin + ": key '" + key + "' expects boolean");
  return *b;
}

std::string Config::get_string(const std::string& key) const {
  const auto& e = entry(key);
  const auto* s = std::get_if<std::string>(&e.value);
  if (!s) throw ConfigError(e.origin + ": key '" + key + "' expects string");
  return *s;
}

std::vector<double> Config::get_reals(const std::string& key) const {
  const auto& e = entry(key);
  const auto* a = std::get_if<Array>(&e.value);
  if (!a) throw ConfigError(e.origin + ": key '" + key + "' expects array of numbers");
  std::vector<double> out;
  for (const auto& n : *a) out.push_back(n.value);
  return out;
}

std::vector<long long> Config::get_ints(const std::string& key) const {
  const auto& e = entry(key);
  const auto* a = std::get_if<Array>(&e.value);
  if (!a) throw ConfigError(e.origin + ": key '" + key + "' expects array of integers");
  std::vector<long long> out;
  for (const auto& n : *a) {
    if (!n.integral) throw ConfigError(e.origin + ": key '" + key + "' expects array of integers");
    out.push_back(static_cast<long long>(n.value));
  }
  return out;
}

std::string Config::dump(const std::vector<KeyInfo>& schema) const {
  std::string top, tables;
  std::string current;
  for (const auto& k : schema) {
    auto it = entries_.find(k.key);
    if (it == entries_.end()) continue;
    const auto dot = k.key.rfind('.');
    if (dot == std::string::npos) {
      top += k.key + " = " + render(it->second.value) + "\n";
      continue;
    }
    const std::string table = k.key.substr(0, dot);
    if (table != current) {
      tables += "\n[" + table + "]\n";
      current = table;
    }
    tables += k.key.substr(dot + 1) + " = " + render(it->second.value) + "\n";
  }
  return top + tables;
}

std::string describe_schema(const std::vector<KeyInfo>& schema) {
  std::size_t width = 0;
  for (const auto& k : schema) width = std::max(width, k.key.size() + 3 + k.default_text.size());
  std::string out = "Config keys (--set key=value, or in the --config file):\n";
  for (const auto& k : schema) {
    std::string head = "  " + k.key + " = " + k.default_text;
    head.resize(std::max(head.size(), width + 4), ' ');
    out += head + "  " + k.help + "\n";
  }
  return out;
}

}  // namespace nwflow
