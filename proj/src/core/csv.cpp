#include "tabformer/csv.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tabformer/hash.hpp"

namespace tabformer {
namespace {

// Reads one record; returns false at end of input. Quoted cells may span lines.
bool read_record(std::istream& in, std::vector<std::string>& cells, std::size_t& line_no) {
  cells.clear();
  std::string cell;
  bool in_quotes = false;
  bool any = false;
  bool was_quoted = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          cell.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_no;
        cell.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (!cell.empty() || was_quoted) {
        throw std::runtime_error("csv: stray quote on line " + std::to_string(line_no));
      }
      in_quotes = true;
      was_quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
      was_quoted = false;
    } else if (c == '\r' && in.peek() == '\n') {
      continue;
    } else if (c == '\n') {
      ++line_no;
      cells.push_back(std::move(cell));
      return true;
    } else {
      cell.push_back(c);
    }
  }
  if (in_quotes) throw std::runtime_error("csv: unterminated quote");
  if (!any) return false;
  cells.push_back(std::move(cell));
  return true;
}

bool needs_quotes(const std::string& cell) {
  return cell.find_first_of(",\"\r\n") != std::string::npos;
}

}  // namespace

std::size_t Table::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("csv: no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

Table parse_csv(std::istream& in) {
  Table table;
  std::size_t line_no = 1;
  if (!read_record(in, table.header, line_no)) throw std::runtime_error("csv: empty input");
  if (!table.header.empty() && table.header[0].starts_with("\xEF\xBB\xBF")) {
    table.header[0].erase(0, 3);
  }
  std::vector<std::string> cells;
  while (read_record(in, cells, line_no)) {
    if (cells.size() == 1 && cells[0].empty()) continue;
    if (cells.size() != table.header.size()) {
      throw std::runtime_error("csv: line " + std::to_string(line_no - 1) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(table.header.size()));
    }
    table.rows.push_back(cells);
  }
  return table;
}

Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return parse_csv(in);
}

std::string to_csv(const Table& table) {
  std::string out;
  auto emit = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      if (needs_quotes(cells[i])) {
        out.push_back('"');
        for (char c : cells[i]) {
          if (c == '"') out.push_back('"');
          out.push_back(c);
        }
        out.push_back('"');
      } else {
        out += cells[i];
      }
    }
    out.push_back('\n');
  };
  emit(table.header);
  for (const auto& row : table.rows) emit(row);
  return out;
}

void write_csv(const std::filesystem::path& path, const Table& table) {
  write_file(path, to_csv(table));
}

}  // namespace tabformer
