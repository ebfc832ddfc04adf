#pragma once

#include <optional>
#include <string>
#include <vector>

namespace didlab::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;            // -1 if absent
  int require_column(const std::string& name) const;    // throws ErrorKind::invalid
};

// RFC-4180-ish reader: header row required, quoted fields supported,
// UTF-8 passed through untouched.
Table read_file(const std::string& path);
Table parse(const std::string& text, const std::string& origin);

// Writes via a temporary file and rename so partially written outputs are
// never observed.
void write_file(const std::string& path, const Table& table);
std::string to_string(const Table& table);

// Shortest round-trip decimal representation (std::to_chars); NaN -> "".
std::string format_double(double value);

double parse_double(const std::string& field, const std::string& context);
long long parse_integer(const std::string& field, const std::string& context);

}  // namespace didlab::csv
