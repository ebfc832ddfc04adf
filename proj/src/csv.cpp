#include "didlab/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "didlab/errors.hpp"

namespace didlab::csv {

int Table::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return -1;
  return static_cast<int>(it - header.begin());
}

int Table::require_column(const std::string& name) const {
  int c = column(name);
  if (c < 0) fail_invalid("missing required column '" + name + "'");
  return c;
}

namespace {

bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\n\r") != std::string::npos;
}

void append_field(std::string& out, const std::string& field) {
  if (!needs_quoting(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

}  // namespace

Table parse(const std::string& text, const std::string& origin) {
  Table table;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool saw_any = false;

  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (!saw_any) {
      table.header = row;
      saw_any = true;
    } else {
      table.rows.push_back(row);
    }
    row.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field += c;
    }
  }
  if (in_quotes) fail_io(origin + ": unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  if (!saw_any) fail_io(origin + ": empty file (header row required)");

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].size() != table.header.size())
      fail_io(origin + ": row " + std::to_string(r + 2) + " has " +
              std::to_string(table.rows[r].size()) + " fields, header has " +
              std::to_string(table.header.size()));
  }
  return table;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path);
}

std::string to_string(const Table& table) {
  std::string out;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c) out += ',';
    append_field(out, table.header[c]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      append_field(out, row[c]);
    }
    out += '\n';
  }
  return out;
}

void write_file(const std::string& path, const Table& table) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot write file: " + tmp);
    out << to_string(table);
    if (!out) fail_io("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail_io("rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
}

std::string format_double(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, const std::string& context) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  double value = 0.0;
  auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    fail_invalid(context + ": not a number: '" + field + "'");
  return value;
}

long long parse_integer(const std::string& field, const std::string& context) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  long long value = 0;
  auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    fail_invalid(context + ": not an integer: '" + field + "'");
  return value;
}

}  // namespace didlab::csv
