#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace pmsfm::cli {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key=value` text, one pair per line, keys in sorted order.
void write_kv(const std::filesystem::path& path, const KeyValues& kv);
/// Blank lines and lines starting with '#' are ignored. Throws FormatError.
KeyValues read_kv(const std::filesystem::path& path);

const std::string& require(const KeyValues& kv, const std::string& key);

std::string format_double(double v);

}  // namespace pmsfm::cli
