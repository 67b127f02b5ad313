#include "cdis/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cdis/error.hpp"

namespace cdis {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

}  // namespace

ConfigMap ConfigMap::parse(std::string_view text, const std::string& source) {
  ConfigMap out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (!out.values_.emplace(key, value).second) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string ConfigMap::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::optional<std::string> ConfigMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void ConfigMap::merge(const ConfigMap& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::optional<std::string> ConfigReader::take(const std::string& key) {
  used_.insert(key);
  return map_.get(key);
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  return take(key).value_or(fallback);
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  auto s = take(key);
  if (!s) return fallback;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || p != s->data() + s->size()) bad_value(key, *s, "a number");
  return v;
}

std::uint64_t ConfigReader::get_u64(const std::string& key, std::uint64_t fallback) {
  return get_optional_u64(key).value_or(fallback);
}

std::optional<std::uint64_t> ConfigReader::get_optional_u64(const std::string& key) {
  auto s = take(key);
  if (!s) return std::nullopt;
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || p != s->data() + s->size()) bad_value(key, *s, "a non-negative integer");
  return v;
}

std::size_t ConfigReader::get_size(const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  auto s = take(key);
  if (!s) return fallback;
  if (*s == "true" || *s == "1" || *s == "on") return true;
  if (*s == "false" || *s == "0" || *s == "off") return false;
  bad_value(key, *s, "a boolean");
}

std::vector<std::size_t> ConfigReader::get_size_list(const std::string& key,
                                                     const std::vector<std::size_t>& fallback) {
  auto s = take(key);
  if (!s) return fallback;
  std::vector<std::size_t> out;
  std::string_view rest = *s;
  if (trim(rest).empty()) return out;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
      bad_value(key, *s, "a comma-separated list of integers");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

void ConfigReader::reject_unknown() const {
  for (const auto& [k, v] : map_.entries()) {
    if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

std::string format_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace cdis
