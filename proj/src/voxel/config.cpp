#include "voxdet/config.hpp"

#include <charconv>
#include <sstream>

#include "voxdet/binary_io.hpp"

namespace voxdet {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
  return v;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

FlatConfig FlatConfig::parse(std::string_view text) {
  FlatConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    cfg.values_[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  return cfg;
}

FlatConfig FlatConfig::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string FlatConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int FlatConfig::get_int(const std::string& key, int fallback) const {
  return has(key) ? parse_number<int>(key, values_.at(key)) : fallback;
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_number<double>(key, values_.at(key)) : fallback;
}

std::uint64_t FlatConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? parse_number<std::uint64_t>(key, values_.at(key)) : fallback;
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> FlatConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& item : split(values_.at(key)))
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  return out;
}

std::vector<double> FlatConfig::get_double_list(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& item : split(values_.at(key)))
    if (!item.empty()) out.push_back(parse_number<double>(key, item));
  return out;
}

std::map<std::string, std::string> FlatConfig::with_prefix(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  const std::string p = prefix + ".";
  for (const auto& [k, v] : values_)
    if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = v;
  return out;
}

}  // namespace voxdet
