#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace pmsfm::testing {

/// Runs the CLI with `args`, sending stdout to `stdout_path` when given.
/// Returns the process exit code.
inline int run_cli(const std::string& args, const std::filesystem::path& stdout_path = {}) {
  std::string cmd = std::string("\"") + PMSFM_CLI_PATH + "\" " + args;
  cmd += stdout_path.empty() ? " > /dev/null" : " > \"" + stdout_path.string() + "\"";
  cmd += " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Relative path -> contents for every regular file under `dir`, except
/// files named `skip`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir, const std::string& skip = "") {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == skip) continue;
    out[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

/// Parses `key=value` lines.
inline std::map<std::string, double> read_keys(const std::filesystem::path& p) {
  std::map<std::string, double> out;
  std::istringstream is(read_file(p));
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = std::strtod(line.c_str() + eq + 1, nullptr);
  }
  return out;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pmsfm_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace pmsfm::testing
