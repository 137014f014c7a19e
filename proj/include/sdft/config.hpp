#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sdft {

// Flat key = value configuration. Keys inside an INI [section] are addressed as "section.key".
// Every typed read records the value actually used, defaults included, so the resolved
// configuration can be written into a manifest. Keys that no reader asked for are errors.
class Config {
 public:
  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  // Overrides (or adds) a key, as done for command-line flags.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  // "none" (or an absent key with no fallback) yields no value.
  std::optional<double> get_optional_double(const std::string& key, std::optional<double> fallback);
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback);

  // Throws ConfigError naming the first key that was supplied but never read.
  void check_all_used() const;
  // Every key read so far with the value used, sorted by key.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  // Canonical "key = value" lines of resolved().
  std::string resolved_text() const;

 private:
  std::optional<std::string> lookup(const std::string& key);
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
  std::set<std::string> used_;
};

// 64-bit FNV-1a, stable across platforms; used for run ids.
std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t v);

}  // namespace sdft
