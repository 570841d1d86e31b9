#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fleetchurn/types.hpp"

namespace fleetchurn {

enum class ColumnKind { Numeric, Categorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  std::vector<double> values;       // numeric values, or level codes for categorical
  std::vector<std::string> levels;  // code -> level name (categorical only)

  int level_code(const std::string& level) const;  // -1 if absent
};

// Row-aligned modeling table: one row per labeled, non-censored vehicle-wave,
// with (household, wave, key) provenance kept alongside the features.
struct Dataset {
  std::vector<Column> columns;
  std::vector<std::string> household_id;
  std::vector<int> wave;
  std::vector<std::string> vehicle_key;
  std::vector<Outcome> label;

  std::size_t n_rows() const { return household_id.size(); }
  int column_index(const std::string& name) const;  // -1 if absent
  const Column& col(const std::string& name) const;
  Column& col(const std::string& name);
  bool has_column(const std::string& name) const { return column_index(name) >= 0; }

  // Stable sort of all rows by (household_id, wave, vehicle_key).
  void sort_by_provenance();
  Dataset select_rows(const std::vector<std::size_t>& idx) const;

  void write_csv(const std::filesystem::path& path) const;
  static Dataset read_csv(const std::filesystem::path& path);
};

}  // namespace fleetchurn
