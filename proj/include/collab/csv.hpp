#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace collab {

// Split one CSV record. Double-quoted fields may contain commas and doubled
// quotes; embedded newlines are not supported.
std::vector<std::string> split_csv_line(std::string_view line);

std::string csv_escape(std::string_view field);
std::string join_csv(const std::vector<std::string>& fields);

struct CsvRecord {
    std::size_t line = 0;  // 1-based physical line number
    std::vector<std::string> fields;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<CsvRecord> records;

    // Index of a header column, or npos.
    std::size_t column(std::string_view name) const;
    std::size_t require_column(std::string_view name) const;
};

// Reads a header plus records. Blank lines and lines starting with '#' are
// skipped. Records with the wrong field count are returned as-is; callers
// decide whether they are malformed.
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text);

}  // namespace collab
