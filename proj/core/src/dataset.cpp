#include "fleetchurn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <set>

#include "fleetchurn/csv.hpp"
#include "fleetchurn/error.hpp"

namespace fleetchurn {

int Column::level_code(const std::string& level) const {
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] == level) return static_cast<int>(i);
  return -1;
}

int Dataset::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return static_cast<int>(i);
  return -1;
}

const Column& Dataset::col(const std::string& name) const {
  int i = column_index(name);
  if (i < 0) throw make_error("UnknownFeature", "no column '" + name + "'");
  return columns[static_cast<std::size_t>(i)];
}

Column& Dataset::col(const std::string& name) {
  int i = column_index(name);
  if (i < 0) throw make_error("UnknownFeature", "no column '" + name + "'");
  return columns[static_cast<std::size_t>(i)];
}

void Dataset::sort_by_provenance() {
  std::vector<std::size_t> idx(n_rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (household_id[a] != household_id[b]) return household_id[a] < household_id[b];
    if (wave[a] != wave[b]) return wave[a] < wave[b];
    return vehicle_key[a] < vehicle_key[b];
  });
  *this = select_rows(idx);
}

Dataset Dataset::select_rows(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.columns.reserve(columns.size());
  for (const auto& c : columns) {
    Column nc;
    nc.name = c.name;
    nc.kind = c.kind;
    nc.levels = c.levels;
    nc.values.reserve(idx.size());
    for (std::size_t i : idx) nc.values.push_back(c.values[i]);
    out.columns.push_back(std::move(nc));
  }
  auto gather = [&](const auto& src, auto& dst) {
    dst.reserve(idx.size());
    for (std::size_t i : idx) dst.push_back(src[i]);
  };
  gather(household_id, out.household_id);
  gather(wave, out.wave);
  gather(vehicle_key, out.vehicle_key);
  if (!label.empty()) gather(label, out.label);
  return out;
}

void Dataset::write_csv(const std::filesystem::path& path) const {
  csv::Table t;
  t.header = {"household_id", "wave", "vehicle_key"};
  for (const auto& c : columns) t.header.push_back(c.name);
  if (!label.empty()) t.header.push_back("outcome");
  t.rows.reserve(n_rows());
  for (std::size_t i = 0; i < n_rows(); ++i) {
    std::vector<std::string> row;
    row.reserve(t.header.size());
    row.push_back(household_id[i]);
    row.push_back(std::to_string(wave[i]));
    row.push_back(vehicle_key[i]);
    for (const auto& c : columns) {
      if (c.kind == ColumnKind::Categorical)
        row.push_back(c.levels[static_cast<std::size_t>(c.values[i])]);
      else
        row.push_back(csv::format_double(c.values[i]));
    }
    if (!label.empty()) row.push_back(std::string(to_string(label[i])));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

namespace {
bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}
}  // namespace

Dataset Dataset::read_csv(const std::filesystem::path& path) {
  csv::Table t = csv::read_file(path);
  Dataset d;
  int hh = t.require_column("household_id");
  int wv = t.require_column("wave");
  int vk = t.require_column("vehicle_key");
  int oc = t.column("outcome");
  std::vector<int> feat_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    int ci = static_cast<int>(c);
    if (ci == hh || ci == wv || ci == vk || ci == oc) continue;
    feat_cols.push_back(ci);
  }
  for (const auto& row : t.rows) {
    d.household_id.push_back(row[static_cast<std::size_t>(hh)]);
    d.wave.push_back(std::stoi(row[static_cast<std::size_t>(wv)]));
    d.vehicle_key.push_back(row[static_cast<std::size_t>(vk)]);
    if (oc >= 0) d.label.push_back(outcome_from_string(row[static_cast<std::size_t>(oc)]));
  }
  for (int ci : feat_cols) {
    Column col;
    col.name = t.header[static_cast<std::size_t>(ci)];
    bool numeric = true;
    for (const auto& row : t.rows) {
      double v;
      if (!parse_double(row[static_cast<std::size_t>(ci)], v)) {
        numeric = false;
        break;
      }
    }
    if (numeric) {
      col.kind = ColumnKind::Numeric;
      for (const auto& row : t.rows) {
        double v = 0;
        parse_double(row[static_cast<std::size_t>(ci)], v);
        col.values.push_back(v);
      }
    } else {
      col.kind = ColumnKind::Categorical;
      // Lexicographic level order so the encoding is independent of row order.
      std::set<std::string> uniq;
      for (const auto& row : t.rows) uniq.insert(row[static_cast<std::size_t>(ci)]);
      col.levels.assign(uniq.begin(), uniq.end());
      for (const auto& row : t.rows)
        col.values.push_back(col.level_code(row[static_cast<std::size_t>(ci)]));
    }
    d.columns.push_back(std::move(col));
  }
  return d;
}

}  // namespace fleetchurn
