#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/dataset.hpp"
#include "fleetchurn/types.hpp"

namespace fleetchurn {

enum class FeatureKind : std::uint8_t { Numeric = 0, Categorical = 1 };

struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  std::vector<std::vector<std::string>> levels;  // empty for numeric features

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;
  bool operator==(const FeatureSchema&) const = default;
};

// Dense row-major feature matrix consumed by the tree models: numeric values
// as-is, categorical features as level codes.
struct FeatureTable {
  FeatureSchema schema;
  std::vector<double> values;  // n_rows x schema.size()
  std::vector<Outcome> labels;

  std::size_t n_rows() const {
    return schema.size() ? values.size() / static_cast<std::size_t>(schema.size()) : 0;
  }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(schema.size()),
            static_cast<std::size_t>(schema.size())};
  }

  static FeatureTable from_dataset(const Dataset& data);
  FeatureTable select_rows(const std::vector<std::size_t>& idx) const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::vector<int> left_levels;  // categorical split: codes routed left
  int left = -1;
  int right = -1;
  double cover = 0.0;  // training rows reaching the node
  double value = 0.0;  // leaf margin contribution

  bool is_leaf() const { return feature < 0; }
  bool goes_left(double v, FeatureKind kind) const;
};

struct Tree {
  int cls = 0;  // class whose margin this tree contributes to
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> row, const FeatureSchema& schema) const;
  double leaf_cover_sum() const;
};

enum class ModelKind : std::uint8_t { Gbm = 0, RandomForest = 1 };
enum class CatMode : std::uint8_t { TargetStatistic = 0, OneHot = 1 };

struct GbmConfig {
  int n_rounds = 500;
  double learning_rate = 0.05;
  int max_leaves = 31;
  double min_child_cover = 20.0;
  int n_histogram_bins = 255;
  double l2 = 1.0;
  CatMode cat_mode = CatMode::TargetStatistic;
  int early_stop_rounds = 50;  // 0 disables
  std::uint64_t seed = 0;
};

struct RfConfig {
  int n_trees = 200;
  int max_depth = 0;  // 0 = unlimited
  double min_child_cover = 1.0;
  bool bootstrap = true;
  int mtry = 0;  // 0 = floor(sqrt(M))
  int n_histogram_bins = 255;
  std::uint64_t seed = 0;
};

struct TreeEnsemble {
  ModelKind kind = ModelKind::Gbm;
  FeatureSchema schema;
  std::array<double, kNumClasses> base_margin{0, 0, 0};
  std::vector<Tree> trees;
  std::string config_json;  // training config snapshot
  std::uint64_t seed = 0;
  std::vector<double> train_log_loss;  // per boosting round (GBM)

  std::array<double, kNumClasses> predict_margin(std::span<const double> row) const;
  std::array<double, kNumClasses> predict_proba(std::span<const double> row) const;
  int predict_class(std::span<const double> row) const;  // ties -> lowest class index

  nlohmann::json to_json() const;
  static TreeEnsemble from_json(const nlohmann::json& j);

  // Throws ZeroCoverNode / corrupt-model errors if cover bookkeeping is broken.
  void validate_covers() const;
};

TreeEnsemble train_gbm(const FeatureTable& train, const GbmConfig& config,
                       const FeatureTable* validation = nullptr);

TreeEnsemble train_random_forest(const FeatureTable& train, const RfConfig& config);

std::array<double, kNumClasses> softmax3(const std::array<double, kNumClasses>& margins);

double multiclass_log_loss(const TreeEnsemble& model, const FeatureTable& data);

}  // namespace fleetchurn
