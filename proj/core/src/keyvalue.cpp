#include "pgroup/keyvalue.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pgroup/tensor.hpp"

namespace pgroup {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <class V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ContractError("config key '" + key + "': cannot parse '" + text + "' as a number");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ContractError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ContractError(source + ":" + std::to_string(lineno) + ": empty key");
    cfg.set(key, trim(std::string_view(t).substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in, path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void KeyValueConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key=value, got '" + assignment + "'");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

std::string KeyValueConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ContractError("missing config key '" + key + "'");
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  return contains(key) ? get(key) : fallback;
}

double KeyValueConfig::get_or(const std::string& key, double fallback) const {
  return contains(key) ? parse_number<double>(key, get(key)) : fallback;
}

std::int64_t KeyValueConfig::get_or(const std::string& key, std::int64_t fallback) const {
  return contains(key) ? parse_number<std::int64_t>(key, get(key)) : fallback;
}

std::uint64_t KeyValueConfig::get_or(const std::string& key, std::uint64_t fallback) const {
  return contains(key) ? parse_number<std::uint64_t>(key, get(key)) : fallback;
}

bool KeyValueConfig::get_or(const std::string& key, bool fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::set<std::string> KeyValueConfig::unused_keys() const {
  std::set<std::string> out;
  for (const auto& [k, v] : entries_)
    if (!used_.contains(k)) out.insert(k);
  return out;
}

std::string KeyValueConfig::str() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  return out.str();
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << str();
}

}  // namespace pgroup
