#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace conformal_triage::io {

/// Shortest decimal form that parses back to the same double ("inf"/"-inf"/"nan" for non-finite).
std::string format_double(double value);

/// Strict parse of a full field; throws ParseError tagged with `line`.
double parse_double(std::string_view field, std::size_t line);
long long parse_integer(std::string_view field, std::size_t line);

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv(std::string_view record);
std::string escape_csv(std::string_view field);
std::string join_csv(const std::vector<std::string>& fields);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace conformal_triage::io
