#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mmpfn {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws DataError when absent.
  std::size_t column(const std::string& name) const;
};

// RFC 4180 subset: comma separated, double-quoted fields with "" escapes,
// LF or CRLF line ends. The first line is the header.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_escape(const std::string& field);

// Serializes header + rows with LF line ends, escaping as needed.
std::string format_csv(const CsvTable& table);
// Creates parent directories as needed.
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Shortest round-trip decimal form of a double ("nan" for NaN).
std::string format_number(double value);

}  // namespace mmpfn
