#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fleetchurn::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  int require_column(const std::string& name) const;
};

Table read_file(const std::filesystem::path& path);
Table read_string(const std::string& text);

void write_file(const std::filesystem::path& path, const Table& table);
std::string write_string(const Table& table);

// Shortest text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace fleetchurn::csv
