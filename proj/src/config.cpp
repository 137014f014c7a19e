#include "sdft/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sdft/errors.hpp"
#include "sdft/metrics.hpp"

namespace sdft {

namespace {

Config parse_stream(std::istream& in, const std::string& origin) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Config c;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      c.set(name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) c.set(name + "." + key, leaf.data());
  }
  return c;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, expected);
  return out;
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_stream(in, path.string());
}

Config Config::from_string(const std::string& text) {
  std::istringstream in(text);
  return parse_stream(in, "config");
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::optional<std::string> Config::lookup(const std::string& key) {
  used_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) {
  const std::string v = lookup(key).value_or(fallback);
  resolved_[key] = v;
  return v;
}

int Config::get_int(const std::string& key, int fallback) {
  const auto raw = lookup(key);
  const int v = raw ? parse_number<int>(key, *raw, "an integer") : fallback;
  resolved_[key] = std::to_string(v);
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) {
  const auto raw = lookup(key);
  const std::uint64_t v = raw ? parse_number<std::uint64_t>(key, *raw, "a non-negative integer") : fallback;
  resolved_[key] = std::to_string(v);
  return v;
}

double Config::get_double(const std::string& key, double fallback) {
  const auto raw = lookup(key);
  const double v = raw ? parse_number<double>(key, *raw, "a number") : fallback;
  resolved_[key] = fmt(v);
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) {
  const auto raw = lookup(key);
  bool v = fallback;
  if (raw) {
    if (*raw == "true" || *raw == "1") v = true;
    else if (*raw == "false" || *raw == "0") v = false;
    else bad_value(key, *raw, "true or false");
  }
  resolved_[key] = v ? "true" : "false";
  return v;
}

std::optional<double> Config::get_optional_double(const std::string& key, std::optional<double> fallback) {
  const auto raw = lookup(key);
  std::optional<double> v = fallback;
  if (raw) v = *raw == "none" ? std::nullopt : std::optional<double>(parse_number<double>(key, *raw, "a number or none"));
  resolved_[key] = v ? fmt(*v) : "none";
  return v;
}

std::vector<int> Config::get_int_list(const std::string& key, const std::vector<int>& fallback) {
  const auto raw = lookup(key);
  std::vector<int> v = fallback;
  if (raw) {
    v.clear();
    std::stringstream ss(*raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
      if (b == std::string::npos) bad_value(key, *raw, "a comma-separated integer list");
      v.push_back(parse_number<int>(key, item.substr(b, e - b + 1), "a comma-separated integer list"));
    }
  }
  std::string text;
  for (std::size_t i = 0; i < v.size(); ++i) text += (i ? "," : "") + std::to_string(v[i]);
  resolved_[key] = text;
  return v;
}

void Config::check_all_used() const {
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
}

std::string Config::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : resolved_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace sdft
