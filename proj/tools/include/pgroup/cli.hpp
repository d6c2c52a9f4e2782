#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pgroup/keyvalue.hpp"

namespace pgroup::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitAudit = 2;

/// One invocation: the config file is parsed first, then values given by
/// subcommand flags, then `--set key=value` overrides in order.
struct RunSpec {
  std::string subcommand;
  std::filesystem::path config_path;
  std::filesystem::path out;
  std::vector<std::string> flag_settings;  ///< key=value pairs derived from flags
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;

  KeyValueConfig effective(const std::string& seed_key) const;
};

/// Parses the command line and runs the subcommand; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pgroup::cli
