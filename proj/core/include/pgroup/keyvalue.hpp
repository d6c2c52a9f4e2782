#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>

namespace pgroup {

/// Flat `key = value` configuration with dotted keys. Blank lines and
/// lines starting with '#' are ignored. Later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<input>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// Applies one `key=value` override.
  void apply_override(const std::string& assignment);
  void merge(const KeyValueConfig& other);

  bool contains(const std::string& key) const { return entries_.contains(key); }
  std::string get(const std::string& key) const;

  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::string get_or(const std::string& key, const char* fallback) const { return get_or(key, std::string(fallback)); }
  double get_or(const std::string& key, double fallback) const;
  std::int64_t get_or(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_or(const std::string& key, std::uint64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const { return get_or(key, std::uint64_t(fallback)); }
  bool get_or(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  /// Keys never read through a getter.
  std::set<std::string> unused_keys() const;

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace pgroup
