#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/types.hpp"

namespace fleetchurn {

// 3x3 counts, rows = truth, cols = predicted, class order Disposed/Kept/Replaced.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  std::int64_t total() const;
  std::int64_t tp(int cls) const;
  std::int64_t fp(int cls) const;
  std::int64_t fn(int cls) const;
  std::int64_t tn(int cls) const;
};

ConfusionMatrix confusion_matrix(const std::vector<Outcome>& truth,
                                 const std::vector<Outcome>& predicted);

struct MetricReport {
  double overall_accuracy = 0.0;
  double average_accuracy = 0.0;
  double macro_precision = 0.0;
  double sensitivity = 0.0;  // macro recall
  double macro_f1 = 0.0;
  double micro = 0.0;  // micro precision = recall = F1 = overall accuracy
  double cohens_kappa = 0.0;
  double specificity = 0.0;  // macro
  double cross_entropy_bits = 0.0;
  double log_loss_nats = 0.0;

  nlohmann::json to_json() const;
};

// Probabilities are row-major n x 3 on the simplex; hard predictions are the
// argmax with ties broken toward the lowest class index.
MetricReport metric_report(const std::vector<Outcome>& truth,
                           const std::vector<std::array<double, kNumClasses>>& probabilities);

Outcome argmax_class(const std::array<double, kNumClasses>& p);

// Household-grouped k-fold assignment: every cluster's rows land in one fold,
// fold sizes balanced by cluster count within one.
std::vector<int> grouped_kfold(const std::vector<std::string>& cluster_ids, int k,
                               std::uint64_t seed);

struct HoldoutSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

HoldoutSplit holdout_by_household(const std::vector<std::string>& cluster_ids,
                                  std::size_t n_holdout, std::uint64_t seed);

}  // namespace fleetchurn
