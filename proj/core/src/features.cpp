#include "fleetchurn/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fleetchurn/csv.hpp"
#include "fleetchurn/error.hpp"

namespace fleetchurn {

int BinSpec::bin_of(double v) const {
  int b = 0;
  for (double c : cuts) {
    if (v < c) break;
    ++b;
  }
  return b;
}

namespace {
std::string num_label(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return csv::format_double(v);
}
}  // namespace

std::string BinSpec::bin_name(int bin) const {
  const int k = static_cast<int>(cuts.size());
  if (bin <= 0) return feature + "_lt_" + num_label(cuts.front());
  if (bin >= k) return feature + "_ge_" + num_label(cuts.back());
  const double lo = cuts[static_cast<std::size_t>(bin - 1)];
  const double hi = cuts[static_cast<std::size_t>(bin)];
  // Integer cuts read like the published bins: [2,5) -> "2_4".
  if (lo == std::floor(lo) && hi == std::floor(hi))
    return feature + "_" + num_label(lo) + "_" + num_label(hi - 1);
  return feature + "_" + num_label(lo) + "_" + num_label(hi);
}

nlohmann::json FeatureSpec::to_json() const {
  nlohmann::json j;
  j["continuous"] = nlohmann::json::array();
  for (const auto& t : continuous) {
    nlohmann::json e;
    e["name"] = t.name;
    if (t.bins) {
      e["transform"] = "bin";
      e["cuts"] = t.bins->cuts;
      e["reference_bin"] = t.bins->reference_bin;
    } else {
      e["transform"] = "identity";
    }
    j["continuous"].push_back(e);
  }
  j["categorical"] = nlohmann::json::array();
  for (const auto& t : categorical) {
    nlohmann::json e;
    e["name"] = t.name;
    e["reference"] = t.reference;
    j["categorical"].push_back(e);
  }
  j["interactions"] = nlohmann::json::array();
  for (const auto& [a, b] : interactions) j["interactions"].push_back({a, b});
  j["year_dummies"] = year_dummies;
  j["segment"] = segment == Segment::All          ? "all"
                 : segment == Segment::OneVehicle ? "one_vehicle"
                                                  : "multi_vehicle";
  return j;
}

FeatureSpec FeatureSpec::from_json(const nlohmann::json& j) {
  FeatureSpec s;
  for (const auto& e : j.at("continuous")) {
    ContinuousTerm t;
    t.name = e.at("name").get<std::string>();
    if (e.value("transform", "identity") == "bin") {
      BinSpec b;
      b.feature = t.name;
      b.cuts = e.at("cuts").get<std::vector<double>>();
      b.reference_bin = e.value("reference_bin", 0);
      t.bins = std::move(b);
    }
    s.continuous.push_back(std::move(t));
  }
  for (const auto& e : j.at("categorical"))
    s.categorical.push_back({e.at("name").get<std::string>(), e.at("reference").get<std::string>()});
  if (j.contains("interactions"))
    for (const auto& e : j["interactions"])
      s.interactions.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  s.year_dummies = j.value("year_dummies", false);
  const std::string seg = j.value("segment", "all");
  s.segment = seg == "one_vehicle"     ? Segment::OneVehicle
              : seg == "multi_vehicle" ? Segment::MultiVehicle
                                       : Segment::All;
  return s;
}

int DesignMatrix::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < column_names.size(); ++i)
    if (column_names[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

// An operand evaluated as a per-row value vector from the raw data.
struct Operand {
  std::string label;
  std::vector<double> values;
};

bool parse_range(const std::string& expr, std::string& name, double& lo, double& hi) {
  auto colon = expr.find(':');
  if (colon == std::string::npos) return false;
  auto dash = expr.find('-', colon + 1);
  if (dash == std::string::npos) return false;
  name = expr.substr(0, colon);
  try {
    lo = std::stod(expr.substr(colon + 1, dash - colon - 1));
    hi = std::stod(expr.substr(dash + 1));
  } catch (...) {
    return false;
  }
  return true;
}

bool parse_comparison(const std::string& expr, std::string& name, std::string& op, double& k) {
  for (const char* o : {"<=", ">=", "<", ">"}) {
    auto pos = expr.find(o);
    if (pos == std::string::npos) continue;
    name = expr.substr(0, pos);
    op = o;
    try {
      k = std::stod(expr.substr(pos + std::strlen(o)));
    } catch (...) {
      return false;
    }
    return true;
  }
  return false;
}

Operand resolve_operand(const Dataset& data, const FeatureSpec& spec, const std::string& expr) {
  const std::size_t n = data.n_rows();
  Operand out;
  out.label = expr;
  out.values.resize(n);

  // Bin column declared on a continuous term.
  for (const auto& t : spec.continuous) {
    if (!t.bins) continue;
    for (int b = 0; b < t.bins->n_bins(); ++b) {
      if (t.bins->bin_name(b) != expr) continue;
      const auto& col = data.col(t.bins->feature);
      for (std::size_t i = 0; i < n; ++i)
        out.values[i] = t.bins->bin_of(col.values[i]) == b ? 1.0 : 0.0;
      return out;
    }
  }

  auto eq = expr.find('=');
  if (eq != std::string::npos && (eq == 0 || (expr[eq - 1] != '<' && expr[eq - 1] != '>'))) {
    const std::string name = expr.substr(0, eq);
    const std::string level = expr.substr(eq + 1);
    const auto& col = data.col(name);
    if (col.kind != ColumnKind::Categorical)
      throw make_error("UnknownFeature", "operand '" + expr + "' addresses a non-categorical column");
    const int code = col.level_code(level);
    if (code < 0) throw make_error("UnknownFeature", "no level '" + level + "' in " + name);
    for (std::size_t i = 0; i < n; ++i)
      out.values[i] = static_cast<int>(col.values[i]) == code ? 1.0 : 0.0;
    return out;
  }

  {
    std::string name, op;
    double k;
    if (parse_comparison(expr, name, op, k)) {
      const auto& col = data.col(name);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = col.values[i];
        out.values[i] = (op == "<" && v < k) || (op == "<=" && v <= k) || (op == ">" && v > k) ||
                                (op == ">=" && v >= k)
                            ? 1.0
                            : 0.0;
      }
      return out;
    }
  }
  {
    std::string name;
    double lo, hi;
    if (parse_range(expr, name, lo, hi)) {
      const auto& col = data.col(name);
      for (std::size_t i = 0; i < n; ++i)
        out.values[i] = col.values[i] >= lo && col.values[i] <= hi ? 1.0 : 0.0;
      return out;
    }
  }

  const auto& col = data.col(expr);  // throws UnknownFeature if absent
  if (col.kind == ColumnKind::Categorical)
    throw make_error("UnknownFeature", "categorical operand '" + expr + "' needs =level");
  out.values = col.values;
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> segment_by_fleet_size(const Dataset& data) {
  if (!data.has_column("n_veh")) throw make_error("MissingFleetSize", "no n_veh column");
  const auto& nveh = data.col("n_veh").values;
  std::vector<std::size_t> one, multi;
  for (std::size_t i = 0; i < data.n_rows(); ++i)
    (nveh[i] == 1.0 ? one : multi).push_back(i);
  return {data.select_rows(one), data.select_rows(multi)};
}

DesignMatrix build_design_matrix(const Dataset& input, const FeatureSpec& spec) {
  Dataset data = input;
  data.sort_by_provenance();
  if (spec.segment != Segment::All) {
    auto [one, multi] = segment_by_fleet_size(data);
    data = spec.segment == Segment::OneVehicle ? std::move(one) : std::move(multi);
    if (data.n_rows() == 0) throw make_error("EmptySegment", "segment filter left no rows");
  }
  const std::size_t n = data.n_rows();

  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  auto add_column = [&](const std::string& name, std::vector<double> v) {
    if (std::find(names.begin(), names.end(), name) != names.end())
      throw make_error("CollinearDuplicate", "duplicate output column '" + name + "'");
    names.push_back(name);
    cols.push_back(std::move(v));
  };

  for (const auto& t : spec.continuous) {
    const auto& col = data.col(t.name);
    if (!t.bins) {
      if (col.kind == ColumnKind::Categorical)
        throw make_error("UnknownFeature", "continuous term '" + t.name + "' is categorical");
      add_column(t.name, col.values);
      continue;
    }
    for (int b = 0; b < t.bins->n_bins(); ++b) {
      if (b == t.bins->reference_bin) continue;
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = t.bins->bin_of(col.values[i]) == b ? 1.0 : 0.0;
      add_column(t.bins->bin_name(b), std::move(v));
    }
  }

  for (const auto& t : spec.categorical) {
    const auto& col = data.col(t.name);
    if (col.kind != ColumnKind::Categorical)
      throw make_error("UnknownFeature", "categorical term '" + t.name + "' is numeric");
    const int ref = col.level_code(t.reference);
    if (ref < 0) throw make_error("UnknownFeature", "reference level '" + t.reference + "' not in " + t.name);
    for (std::size_t l = 0; l < col.levels.size(); ++l) {
      if (static_cast<int>(l) == ref) continue;
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i)
        v[i] = static_cast<std::size_t>(col.values[i]) == l ? 1.0 : 0.0;
      add_column(t.name + "=" + col.levels[l], std::move(v));
    }
  }

  for (const auto& [ea, eb] : spec.interactions) {
    Operand a = resolve_operand(data, spec, ea);
    Operand b = resolve_operand(data, spec, eb);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = a.values[i] * b.values[i];
    add_column(a.label + "*" + b.label, std::move(v));
  }

  if (spec.year_dummies) {
    const auto& wave = data.wave;
    std::set<int> years(wave.begin(), wave.end());
    bool first = true;
    for (int y : years) {
      if (first) {  // reference year
        first = false;
        continue;
      }
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = wave[i] == y ? 1.0 : 0.0;
      add_column("year_" + std::to_string(y), std::move(v));
    }
  }

  // Exact-duplicate value columns are as fatal as duplicate names.
  for (std::size_t a = 0; a < cols.size(); ++a)
    for (std::size_t b = a + 1; b < cols.size(); ++b)
      if (cols[a] == cols[b])
        throw make_error("CollinearDuplicate",
                         "columns '" + names[a] + "' and '" + names[b] + "' are identical");

  DesignMatrix dm;
  dm.column_names = std::move(names);
  dm.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const double v = cols[c][i];
      if (!std::isfinite(v))
        throw make_error("NonFiniteValue", "column '" + dm.column_names[c] + "' row " + std::to_string(i));
      dm.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v;
    }
  dm.household_id = data.household_id;
  dm.wave = data.wave;
  dm.vehicle_key = data.vehicle_key;
  dm.label = data.label;

  std::map<std::string, int> cluster_code;
  for (const auto& hh : dm.household_id) cluster_code.emplace(hh, 0);
  int next = 0;
  for (auto& [hh, code] : cluster_code) code = next++;
  dm.cluster_levels.resize(cluster_code.size());
  for (const auto& [hh, code] : cluster_code) dm.cluster_levels[static_cast<std::size_t>(code)] = hh;
  dm.cluster.reserve(n);
  for (const auto& hh : dm.household_id) dm.cluster.push_back(cluster_code[hh]);
  return dm;
}

FeatureSpec baseline_spec(const Dataset& data) {
  FeatureSpec s;
  for (const auto& c : data.columns) {
    if (c.name == "wave") continue;  // handled by year dummies
    if (c.kind == ColumnKind::Numeric) {
      s.continuous.push_back({c.name, std::nullopt});
    } else {
      std::string ref = c.levels.front();
      if (c.name == "vehtype") ref = "car";
      if (c.name == "income_bin") ref = "50_75";
      if (c.name == "edu") ref = "lt_hs";
      if (c.name == "ownlease") ref = "leased";
      if (c.name == "race" && c.level_code("asian") >= 0) ref = "asian";
      s.categorical.push_back({c.name, ref});
    }
  }
  s.year_dummies = true;
  s.segment = Segment::All;
  return s;
}

}  // namespace fleetchurn
