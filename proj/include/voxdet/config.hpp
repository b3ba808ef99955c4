#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace voxdet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat "key = value" text. '#' starts a comment, blank lines are skipped,
// keys and values are trimmed and a repeated key keeps its last value.
class FlatConfig {
 public:
  FlatConfig() = default;
  explicit FlatConfig(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  static FlatConfig parse(std::string_view text);
  static FlatConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Typed getters throw ConfigError on malformed values.
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;

  // Entries under "<prefix>." with the prefix stripped.
  std::map<std::string, std::string> with_prefix(const std::string& prefix) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace voxdet
