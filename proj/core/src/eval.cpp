#include "fleetchurn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "fleetchurn/error.hpp"
#include "fleetchurn/log.hpp"
#include "fleetchurn/rng.hpp"

namespace fleetchurn {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::int64_t ConfusionMatrix::tp(int cls) const {
  return counts[static_cast<std::size_t>(cls)][static_cast<std::size_t>(cls)];
}

std::int64_t ConfusionMatrix::fp(int cls) const {
  std::int64_t s = 0;
  for (int t = 0; t < kNumClasses; ++t)
    if (t != cls) s += counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(cls)];
  return s;
}

std::int64_t ConfusionMatrix::fn(int cls) const {
  std::int64_t s = 0;
  for (int p = 0; p < kNumClasses; ++p)
    if (p != cls) s += counts[static_cast<std::size_t>(cls)][static_cast<std::size_t>(p)];
  return s;
}

std::int64_t ConfusionMatrix::tn(int cls) const { return total() - tp(cls) - fp(cls) - fn(cls); }

ConfusionMatrix confusion_matrix(const std::vector<Outcome>& truth,
                                 const std::vector<Outcome>& predicted) {
  if (truth.size() != predicted.size())
    throw make_error("LengthMismatch", std::to_string(truth.size()) + " truths vs " +
                                           std::to_string(predicted.size()) + " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == Outcome::Censored || predicted[i] == Outcome::Censored)
      throw make_error("UnknownLabel", "censored rows cannot be scored");
    cm.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])]++;
  }
  return cm;
}

Outcome argmax_class(const std::array<double, kNumClasses>& p) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
  return static_cast<Outcome>(best);
}

namespace {
// 0/0 per-class ratios are defined as 0 with a warning so reports stay total.
double safe_ratio(double num, double denom, const char* what) {
  if (denom == 0.0) {
    log::warn(std::string("0/0 in ") + what + "; reporting 0");
    return 0.0;
  }
  return num / denom;
}
}  // namespace

MetricReport metric_report(const std::vector<Outcome>& truth,
                           const std::vector<std::array<double, kNumClasses>>& probabilities) {
  if (truth.size() != probabilities.size())
    throw make_error("LengthMismatch", "probability rows do not match labels");
  const std::size_t n = truth.size();
  if (n == 0) throw make_error("EmptyPanel", "nothing to score");

  std::vector<Outcome> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = probabilities[i];
    const double sum = p[0] + p[1] + p[2];
    if (std::abs(sum - 1.0) > 1e-6 || p[0] < -1e-12 || p[1] < -1e-12 || p[2] < -1e-12)
      throw make_error("NotASimplex", "row " + std::to_string(i) + " sums to " + std::to_string(sum));
    predicted[i] = argmax_class(p);
  }
  const ConfusionMatrix cm = confusion_matrix(truth, predicted);
  const double nd = static_cast<double>(n);

  MetricReport r;
  std::int64_t diag = 0;
  for (int c = 0; c < kNumClasses; ++c) diag += cm.tp(c);
  r.overall_accuracy = static_cast<double>(diag) / nd;

  // Mean one-vs-all accuracy; equals 1 - 2(1-acc)/3 for single-label 3-class.
  double avg = 0.0;
  for (int c = 0; c < kNumClasses; ++c)
    avg += static_cast<double>(cm.tp(c) + cm.tn(c)) / nd;
  r.average_accuracy = avg / kNumClasses;

  double prec = 0.0, rec = 0.0, f1 = 0.0, spec = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double p_c = safe_ratio(static_cast<double>(cm.tp(c)),
                                  static_cast<double>(cm.tp(c) + cm.fp(c)), "precision");
    const double r_c = safe_ratio(static_cast<double>(cm.tp(c)),
                                  static_cast<double>(cm.tp(c) + cm.fn(c)), "recall");
    prec += p_c;
    rec += r_c;
    f1 += safe_ratio(2.0 * p_c * r_c, p_c + r_c, "f1");
    spec += safe_ratio(static_cast<double>(cm.tn(c)), static_cast<double>(cm.tn(c) + cm.fp(c)),
                       "specificity");
  }
  r.macro_precision = prec / kNumClasses;
  r.sensitivity = rec / kNumClasses;
  r.macro_f1 = f1 / kNumClasses;
  r.specificity = spec / kNumClasses;

  // Micro: pooled one-vs-all counts give precision = recall = overall accuracy.
  std::int64_t micro_tp = 0, micro_fp = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    micro_tp += cm.tp(c);
    micro_fp += cm.fp(c);
  }
  r.micro = static_cast<double>(micro_tp) / static_cast<double>(micro_tp + micro_fp);

  double p_e = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double row = static_cast<double>(cm.tp(c) + cm.fn(c));
    const double col = static_cast<double>(cm.tp(c) + cm.fp(c));
    p_e += row * col / (nd * nd);
  }
  r.cohens_kappa = p_e >= 1.0 ? 1.0 : (r.overall_accuracy - p_e) / (1.0 - p_e);

  double nats = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pt = std::max(probabilities[i][static_cast<std::size_t>(truth[i])], 1e-15);
    nats -= std::log(pt);
  }
  r.log_loss_nats = nats / nd;
  r.cross_entropy_bits = r.log_loss_nats / std::log(2.0);
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["overall_accuracy"] = overall_accuracy;
  j["average_accuracy"] = average_accuracy;
  j["macro_precision"] = macro_precision;
  j["sensitivity"] = sensitivity;
  j["macro_f1"] = macro_f1;
  j["micro"] = micro;
  j["cohens_kappa"] = cohens_kappa;
  j["specificity"] = specificity;
  j["cross_entropy_bits"] = cross_entropy_bits;
  j["log_loss_nats"] = log_loss_nats;
  return j;
}

std::vector<int> grouped_kfold(const std::vector<std::string>& cluster_ids, int k,
                               std::uint64_t seed) {
  if (k < 2) throw make_error("TooFewClusters", "k must be at least 2");
  std::set<std::string> uniq(cluster_ids.begin(), cluster_ids.end());
  if (static_cast<int>(uniq.size()) < k)
    throw make_error("TooFewClusters", std::to_string(uniq.size()) + " clusters for k=" +
                                           std::to_string(k));
  std::vector<std::string> households(uniq.begin(), uniq.end());
  Rng rng(derive_seed(seed, "grouped_kfold"));
  rng.shuffle(households);

  std::vector<std::pair<std::string, int>> assignment;
  assignment.reserve(households.size());
  for (std::size_t i = 0; i < households.size(); ++i)
    assignment.emplace_back(households[i], static_cast<int>(i % static_cast<std::size_t>(k)));
  std::sort(assignment.begin(), assignment.end());

  std::vector<int> folds(cluster_ids.size());
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    const auto it = std::lower_bound(assignment.begin(), assignment.end(),
                                     std::make_pair(cluster_ids[i], -1));
    folds[i] = it->second;
  }
  return folds;
}

HoldoutSplit holdout_by_household(const std::vector<std::string>& cluster_ids,
                                  std::size_t n_holdout, std::uint64_t seed) {
  std::set<std::string> uniq(cluster_ids.begin(), cluster_ids.end());
  if (n_holdout >= uniq.size() && n_holdout > 0)
    throw make_error("NotEnoughHouseholds", std::to_string(uniq.size()) + " households, requested " +
                                                std::to_string(n_holdout));
  std::vector<std::string> households(uniq.begin(), uniq.end());
  Rng rng(derive_seed(seed, "holdout_by_household"));
  rng.shuffle(households);

  HoldoutSplit split;
  split.test_ids.assign(households.begin(),
                        households.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  split.train_ids.assign(households.begin() + static_cast<std::ptrdiff_t>(n_holdout),
                         households.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

}  // namespace fleetchurn
