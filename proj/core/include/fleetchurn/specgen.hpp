#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/features.hpp"
#include "fleetchurn/shap.hpp"

namespace fleetchurn {

struct BinProposal {
  BinSpec bins;
  double objective = 0.0;  // penalized SSE at the chosen segmentation
  double penalty_used = 0.0;
  int n_segments = 0;
};

struct SegmentationConfig {
  int max_bins = 6;
  double penalty = -1.0;  // < 0: BIC-style noise_var * ln(n_rows)
  double penalty_factor = 1.0;
};

// Optimal piecewise-constant segmentation of mean attribution vs feature
// value: exact dynamic program over sorted unique values minimizing
// count-weighted SSE + penalty per extra segment. Points are (value, phi)
// pairs, one per row.
BinProposal propose_bins(const std::vector<std::pair<double, double>>& points,
                         const std::string& feature, const SegmentationConfig& config = {});

// Exposed for oracle tests: the same objective evaluated for an explicit cut
// placement.
double segmentation_objective(const std::vector<std::pair<double, double>>& points,
                              const std::vector<double>& cuts);

struct InteractionSelection {
  std::vector<std::pair<std::string, std::string>> pairs;  // product terms to add
  bool recommend_segmentation = false;
  double segmentation_share = 0.0;  // share of top pairs involving the fleet-size variable
};

// Top-K pairs become interaction terms; pairs involving the segmentation
// variable become a segmentation recommendation instead when that variable
// appears in at least half of the top K.
InteractionSelection select_interactions(const std::vector<RankedPair>& ranking, int top_k,
                                         const std::string& segmentation_var = "n_veh");

struct SpecProposal {
  std::vector<BinProposal> bins;
  std::vector<RankedPair> interactions;  // scored pairs retained as terms
  InteractionSelection selection;
  std::string model_hash;
  std::string data_hash;

  nlohmann::json to_json() const;
};

struct EmitConfig {
  bool apply_manual_template = true;  // age>60 indicator + parental-age interaction devices
};

// Folds the proposal into the baseline specification: binned transforms,
// interaction product terms (with collinear main effects dropped), and the
// fixed manual devices. Segmentation is carried on the returned spec's
// segment field consumers clone per segment.
FeatureSpec emit_mnl_spec(const FeatureSpec& baseline, const Dataset& data,
                          const SpecProposal& proposal, const EmitConfig& config = {});

// Segment-specific clone: one-vehicle fits drop the constant fleet-size term.
FeatureSpec spec_for_segment(const FeatureSpec& spec, Segment segment);

}  // namespace fleetchurn
