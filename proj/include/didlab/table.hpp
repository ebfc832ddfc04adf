#pragma once

#include <string>
#include <variant>
#include <vector>

#include "didlab/csv.hpp"

namespace didlab {

// Rectangular result table: the common currency between the estimators, the
// C API and the CLI. Cells are either numeric or text.
class Table {
 public:
  using Cell = std::variant<double, std::string>;

  Table() = default;
  explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const { return columns_; }
  int n_rows() const { return static_cast<int>(rows_.size()); }
  int n_cols() const { return static_cast<int>(columns_.size()); }

  void add_row(std::vector<Cell> row);
  const Cell& at(int row, int col) const;

  bool is_numeric(int row, int col) const;
  double number(int row, int col) const;        // NaN for text cells
  std::string text(int row, int col) const;     // formatted for numeric cells

  csv::Table to_csv() const;
  void write_csv(const std::string& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<Cell>> rows_;
};

}  // namespace didlab
