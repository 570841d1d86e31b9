#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fleetchurn/trees.hpp"

namespace fleetchurn {

// Per-row attribution in margin units, class-major layout [class][feature].
struct ShapValues {
  std::array<double, kNumClasses> base{0, 0, 0};
  int n_features = 0;
  std::vector<double> phi;

  double at(int cls, int feature) const {
    return phi[static_cast<std::size_t>(cls * n_features + feature)];
  }
};

// Exact path-dependent attributions: features outside the conditioning set
// descend both children weighted by training cover, conditioned features
// follow the row's branch.
ShapValues tree_shap(const TreeEnsemble& model, std::span<const double> row);

// Direct evaluation of the Shapley sum over all 2^M feature subsets with the
// same cover-weighted conditional expectation. Authoritative but exponential;
// guarded to M <= 12.
ShapValues brute_force_shap(const TreeEnsemble& model, std::span<const double> row);

// Pairwise interaction values, class-major [class][feature][feature].
// Off-diagonals are half the difference between attributions with the partner
// feature forced present vs absent, symmetrized; diagonals absorb the
// remainder so each row sums back to phi.
struct ShapInteractions {
  int n_features = 0;
  std::vector<double> values;

  double at(int cls, int a, int b) const {
    return values[static_cast<std::size_t>((cls * n_features + a) * n_features + b)];
  }
};

ShapInteractions shap_interactions(const TreeEnsemble& model, std::span<const double> row);

// Subset-enumeration oracle for the interaction index; guarded to M <= 8.
ShapInteractions brute_force_interactions(const TreeEnsemble& model, std::span<const double> row);

struct ShapMatrix {
  std::vector<std::string> feature_names;
  std::array<double, kNumClasses> base{0, 0, 0};
  std::size_t n_rows = 0;
  int n_features = 0;
  std::vector<double> values;  // [row][class][feature]

  double at(std::size_t row, int cls, int feature) const {
    return values[(row * kNumClasses + static_cast<std::size_t>(cls)) *
                      static_cast<std::size_t>(n_features) +
                  static_cast<std::size_t>(feature)];
  }
};

ShapMatrix compute_shap_matrix(const TreeEnsemble& model, const FeatureTable& data,
                               int threads = 1);

// Mean absolute interaction strength aggregated over rows and all classes,
// restricted to the given feature indices (M x M, zero outside the subset).
struct InteractionSummary {
  std::vector<std::string> feature_names;
  int n_features = 0;
  std::vector<double> mean_abs;  // [feature][feature], symmetric

  double at(int a, int b) const {
    return mean_abs[static_cast<std::size_t>(a * n_features + b)];
  }
};

InteractionSummary compute_interaction_summary(const TreeEnsemble& model, const FeatureTable& data,
                                               const std::vector<int>& features, int threads = 1);

struct ImportanceEntry {
  std::string feature;
  double mean_abs_shap = 0.0;
};

// Descending by mean |phi| over rows (and classes when cls = -1);
// deterministic tie-break by feature name.
std::vector<ImportanceEntry> global_importance(const ShapMatrix& matrix, int cls = -1);

struct RankedPair {
  std::string feature_a;  // lexicographically first
  std::string feature_b;
  double score = 0.0;
};

// Restricts to the top_features most important features, then ranks unordered
// pairs by mean |interaction|; top_pairs <= 0 returns the full ranking.
std::vector<RankedPair> rank_interactions(const InteractionSummary& summary,
                                          const std::vector<ImportanceEntry>& importance,
                                          int top_features, int top_pairs);

struct DependenceRow {
  double feature_value = 0.0;
  double shap_value = 0.0;
  double color_value = 0.0;
  int cls = 0;
};

// One dot per (row, class): no aggregation.
std::vector<DependenceRow> dependence_table(const ShapMatrix& matrix, const FeatureTable& data,
                                            const std::string& feature,
                                            const std::string& color_feature);

}  // namespace fleetchurn
