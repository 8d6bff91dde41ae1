#include "finr/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "finr/errors.hpp"

namespace finr {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const std::size_t hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!cfg.kv_.emplace(full, value).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + full + "'");
  }
  return cfg;
}

std::string Config::raw(const std::string& key) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const { return raw(key); }

real Config::get_real(const std::string& key, real fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& s = it->second;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  return real(v);
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& s = it->second;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& s = it->second;
  if (!s.empty() && s.front() == '-')
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<std::size_t> Config::get_sizes(const std::string& key,
                                           std::vector<std::size_t> fallback) const {
  used_.insert(key);
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<std::size_t> out;
  std::istringstream is(it->second);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty() || item.front() == '-')
      throw ConfigError("key '" + key + "': expected positive integers, got '" + it->second + "'");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (end == item.c_str() || *end != '\0' || v == 0)
      throw ConfigError("key '" + key + "': expected positive integers, got '" + it->second + "'");
    out.push_back(std::size_t(v));
  }
  if (out.empty())
    throw ConfigError("key '" + key + "': expected at least one integer");
  return out;
}

void Config::reject_unused() const {
  std::string bad;
  for (const auto& [key, value] : kv_)
    if (!used_.count(key)) bad += (bad.empty() ? "" : ", ") + ("'" + key + "'");
  if (!bad.empty())
    throw ConfigError("unknown key " + bad +
                      " (not recognized by this command; check for typos)");
}

}  // namespace finr
