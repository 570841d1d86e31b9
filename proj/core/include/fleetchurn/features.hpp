#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/dataset.hpp"

namespace fleetchurn {

// Right-open bins over a numeric feature: cuts c1 < ... < ck define
// [-inf,c1), [c1,c2), ..., [ck,inf). reference_bin is dropped from encoding.
struct BinSpec {
  std::string feature;
  std::vector<double> cuts;
  int reference_bin = 0;

  int bin_of(double v) const;
  int n_bins() const { return static_cast<int>(cuts.size()) + 1; }
  std::string bin_name(int bin) const;
};

enum class Segment { All, OneVehicle, MultiVehicle };

struct ContinuousTerm {
  std::string name;
  std::optional<BinSpec> bins;  // absent = identity
};

struct CategoricalTerm {
  std::string name;
  std::string reference;
};

// Interaction operands are parsed from compact strings:
//   "ch_income"        numeric value
//   "ownlease=leased"  categorical level indicator
//   "hh_age<27"        threshold indicator (also <=, >, >=)
//   "hh_age:27-35"     closed-range indicator
//   "vintage_2_4"      a bin column declared on a continuous term
struct FeatureSpec {
  std::vector<ContinuousTerm> continuous;
  std::vector<CategoricalTerm> categorical;
  std::vector<std::pair<std::string, std::string>> interactions;
  bool year_dummies = false;
  Segment segment = Segment::All;

  nlohmann::json to_json() const;
  static FeatureSpec from_json(const nlohmann::json& j);
};

struct DesignMatrix {
  std::vector<std::string> column_names;
  Eigen::MatrixXd X;  // n rows x columns
  std::vector<std::string> household_id;
  std::vector<int> wave;
  std::vector<std::string> vehicle_key;
  std::vector<Outcome> label;
  std::vector<int> cluster;  // household code per row
  std::vector<std::string> cluster_levels;

  std::size_t n_rows() const { return household_id.size(); }
  int column_index(const std::string& name) const;
};

DesignMatrix build_design_matrix(const Dataset& data, const FeatureSpec& spec);

std::pair<Dataset, Dataset> segment_by_fleet_size(const Dataset& data);

// The bMNL specification: every feature enters linearly / as plain dummies,
// with reference levels matching the published coefficient table layout.
FeatureSpec baseline_spec(const Dataset& data);

}  // namespace fleetchurn
