#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dcst {

/// Flat `key = value` settings. Lines starting with `#` are comments; list
/// values are comma separated and may be wrapped in brackets (`[3, 4]`,
/// `[]` for an empty list).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig parse_string(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, const std::vector<std::int64_t>& values);
  void set(const std::string& key, const std::vector<double>& values);
  /// Copies every entry of `other`, replacing existing keys.
  void merge(const KeyValueConfig& other);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         const std::vector<std::int64_t>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  /// Throws ConfigError naming the first key not in `known`.
  void check_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  void write(std::ostream& out) const;
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dcst
