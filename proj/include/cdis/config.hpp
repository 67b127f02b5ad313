#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cdis {

/// Flat `key = value` settings with dotted section prefixes. Lines starting
/// with `#` (after optional whitespace) and blank lines are ignored. Keys are
/// kept sorted, so serialization is canonical.
class ConfigMap {
 public:
  /// Throws ConfigError on malformed lines or duplicate keys; `source`
  /// names the input in messages.
  static ConfigMap parse(std::string_view text, const std::string& source = "config");
  static ConfigMap load(const std::string& path);

  std::string serialize() const;

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void erase(const std::string& key) { values_.erase(key); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  /// Entries of `other` replace ours.
  void merge(const ConfigMap& other);

 private:
  std::map<std::string, std::string> values_;
};

/// Typed access to a ConfigMap that remembers which keys were read, so
/// leftovers can be reported as unknown.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& map) : map_(map) {}

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  std::optional<std::uint64_t> get_optional_u64(const std::string& key);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& fallback);

  /// Throws ConfigError naming the first key that was never read.
  void reject_unknown() const;

 private:
  std::optional<std::string> take(const std::string& key);

  const ConfigMap& map_;
  std::set<std::string> used_;
};

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);
std::string format_bool(bool v);
std::string format_size_list(const std::vector<std::size_t>& v);

}  // namespace cdis
