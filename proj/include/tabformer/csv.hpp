#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tabformer {

/// In-memory CSV table: header plus string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws if absent.
  std::size_t column(const std::string& name) const;
};

/// Comma-delimited, double-quoted fields with "" escapes, LF or CRLF line ends.
Table parse_csv(std::istream& in);
Table read_csv(const std::filesystem::path& path);

std::string to_csv(const Table& table);
void write_csv(const std::filesystem::path& path, const Table& table);

}  // namespace tabformer
