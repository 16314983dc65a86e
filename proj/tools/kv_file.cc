#include "kv_file.h"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "pmsfm/errors.h"

namespace pmsfm::cli {

void write_kv(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  if (!os) throw Error("failed writing " + path.string());
}

KeyValues read_kv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  KeyValues kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("malformed line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("missing key: " + key);
  return it->second;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace pmsfm::cli
