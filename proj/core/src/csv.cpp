#include "fleetchurn/csv.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fleetchurn/error.hpp"

namespace fleetchurn::csv {

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

int Table::require_column(const std::string& name) const {
  int c = column(name);
  if (c < 0) throw make_error("MissingField", "missing column '" + name + "'");
  return c;
}

namespace {

std::vector<std::string> parse_line(const std::string& text, std::size_t& pos) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  const std::size_t n = text.size();
  while (pos < n) {
    char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < n && text[pos + 1] == '"') {
          field += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++pos;
      break;
    } else if (c != '\r') {
      field += c;
    }
    ++pos;
  }
  fields.push_back(std::move(field));
  return fields;
}

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

void append_field(std::string& out, const std::string& s) {
  if (!needs_quoting(s)) {
    out += s;
    return;
  }
  out += '"';
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

}  // namespace

Table read_string(const std::string& text) {
  Table t;
  std::size_t pos = 0;
  if (text.empty()) return t;
  t.header = parse_line(text, pos);
  while (pos < text.size()) {
    auto row = parse_line(text, pos);
    if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
    if (row.size() != t.header.size())
      throw make_error("MalformedCsv", "row has " + std::to_string(row.size()) +
                                           " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw make_error("IoError", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_string(ss.str());
}

std::string write_string(const Table& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    append_field(out, table.header[i]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      append_field(out, row[i]);
    }
    out += '\n';
  }
  return out;
}

void write_file(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw make_error("IoError", "cannot write " + path.string());
  out << write_string(table);
}

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), ptr);
}

}  // namespace fleetchurn::csv
