#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace bridge {

/// Writes to a sibling temporary file and renames it over path, so readers
/// never observe a partially written file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Whole-file read; throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double ("%.17g" trimmed), used by
/// every CSV writer so identical runs yield identical bytes.
std::string format_number(double value);

/// Flat "key = value" text. Blank lines and '#' comments are skipped.
/// Duplicate keys and lines without '=' are rejected with the line number.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

/// Strict numeric parsing of a whole token; throws ConfigError naming key.
double parse_double(std::string_view key, std::string_view value);
long long parse_int(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);

}  // namespace bridge
