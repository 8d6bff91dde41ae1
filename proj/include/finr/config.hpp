#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "finr/tensor.hpp"

namespace finr {

// key = value lines grouped by [section] headers, '#' starts a comment,
// whitespace is trimmed. Keys are addressed as "section.key" ("key" alone
// before any header). Every read is recorded; reject_unused() throws for
// keys the run never consumed, so a typo cannot silently become a default.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  real get_real(const std::string& key, real fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     std::vector<std::size_t> fallback) const;

  // Throws ConfigError naming every present-but-unread key.
  void reject_unused() const;

  // Full key/value view, for echoing resolved settings into run manifests.
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::string raw(const std::string& key) const;

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

}  // namespace finr
