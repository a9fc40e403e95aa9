#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace nwflow {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ValueType { integer, real, boolean, string, real_array, int_array };

/// One accepted key: dotted name ("integrator.steps"), type, default as TOML
/// text, and a one-line description for --help.
struct KeyInfo {
  std::string key;
  ValueType type;
  std::string default_text;
  std::string help;
};

/// A parsed TOML subset: [table] headers, key = value with strings, numbers,
/// booleans and flat numeric arrays, # comments.
class Config {
 public:
  struct Number {
    double value = 0.0;
    bool integral = false;
  };
  using Array = std::vector<Number>;
  using Value = std::variant<Number, bool, std::string, Array>;

  struct Entry {
    Value value;
    std::string origin;  // "file:line" or "--set"
  };

  static Config parse(const std::string& text, const std::string& origin = "<config>");

  /// "key=value"; value is TOML text, or a bare word taken as a string.
  void apply_override(const std::string& assignment);

  /// Fills defaults and rejects unknown keys and type mismatches.
  void resolve(const std::vector<KeyInfo>& schema);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<double> get_reals(const std::string& key) const;
  std::vector<long long> get_ints(const std::string& key) const;

  /// All resolved keys in TOML form, grouped by table, in schema order.
  std::string dump(const std::vector<KeyInfo>& schema) const;

 private:
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

std::string describe_schema(const std::vector<KeyInfo>& schema);

}  // namespace nwflow
