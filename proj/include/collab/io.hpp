#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace collab {

// Shortest representation that round-trips; NaN/inf spelled "nan"/"inf".
std::string format_number(double value);
double parse_number(std::string_view text);  // throws InputError

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace collab
