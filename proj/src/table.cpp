#include "didlab/table.hpp"

#include <cmath>
#include <limits>

#include "didlab/errors.hpp"

namespace didlab {

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns_.size())
    fail_invalid("table row has " + std::to_string(row.size()) + " cells, expected " +
                 std::to_string(columns_.size()));
  rows_.push_back(std::move(row));
}

const Table::Cell& Table::at(int row, int col) const {
  if (row < 0 || row >= n_rows() || col < 0 || col >= n_cols())
    fail_invalid("table index out of range");
  return rows_[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
}

bool Table::is_numeric(int row, int col) const {
  return std::holds_alternative<double>(at(row, col));
}

double Table::number(int row, int col) const {
  const Cell& cell = at(row, col);
  if (const double* v = std::get_if<double>(&cell)) return *v;
  return std::numeric_limits<double>::quiet_NaN();
}

std::string Table::text(int row, int col) const {
  const Cell& cell = at(row, col);
  if (const double* v = std::get_if<double>(&cell)) return csv::format_double(*v);
  return std::get<std::string>(cell);
}

csv::Table Table::to_csv() const {
  csv::Table out;
  out.header = columns_;
  out.rows.reserve(rows_.size());
  for (int r = 0; r < n_rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(columns_.size());
    for (int c = 0; c < n_cols(); ++c) row.push_back(text(r, c));
    out.rows.push_back(std::move(row));
  }
  return out;
}

void Table::write_csv(const std::string& path) const { csv::write_file(path, to_csv()); }

}  // namespace didlab
