#include "fleetchurn/specgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fleetchurn/error.hpp"

namespace fleetchurn {

namespace {

struct GroupedSeries {
  std::vector<double> value;  // sorted unique feature values
  std::vector<double> mean;   // mean phi at each value
  std::vector<double> count;
  double n_rows = 0.0;
};

GroupedSeries group_points(const std::vector<std::pair<double, double>>& points) {
  std::map<double, std::pair<double, double>> acc;  // value -> (sum, count)
  for (const auto& [v, phi] : points) {
    auto& e = acc[v];
    e.first += phi;
    e.second += 1.0;
  }
  GroupedSeries g;
  for (const auto& [v, e] : acc) {
    g.value.push_back(v);
    g.mean.push_back(e.first / e.second);
    g.count.push_back(e.second);
    g.n_rows += e.second;
  }
  return g;
}

// Count-weighted SSE of one segment [i, j] of unique values, via prefix sums.
struct SegmentCost {
  std::vector<double> pw, pwm, pwm2;  // prefix weights, weighted means, weighted squares

  explicit SegmentCost(const GroupedSeries& g) {
    const std::size_t u = g.value.size();
    pw.assign(u + 1, 0.0);
    pwm.assign(u + 1, 0.0);
    pwm2.assign(u + 1, 0.0);
    for (std::size_t i = 0; i < u; ++i) {
      pw[i + 1] = pw[i] + g.count[i];
      pwm[i + 1] = pwm[i] + g.count[i] * g.mean[i];
      pwm2[i + 1] = pwm2[i] + g.count[i] * g.mean[i] * g.mean[i];
    }
  }
  double operator()(std::size_t i, std::size_t j) const {  // inclusive range
    const double w = pw[j + 1] - pw[i];
    const double s = pwm[j + 1] - pwm[i];
    const double s2 = pwm2[j + 1] - pwm2[i];
    return std::max(0.0, s2 - s * s / w);
  }
};

// Difference-based noise estimate of the per-row phi variance, from adjacent
// unique-value means weighted by their precision.
double estimate_noise_var(const GroupedSeries& g) {
  if (g.value.size() < 3) return 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < g.value.size(); ++i) {
    const double prec = 1.0 / g.count[i] + 1.0 / g.count[i + 1];
    acc += (g.mean[i + 1] - g.mean[i]) * (g.mean[i + 1] - g.mean[i]) / prec;
    ++n;
  }
  return acc / (2.0 * static_cast<double>(n));
}

}  // namespace

double segmentation_objective(const std::vector<std::pair<double, double>>& points,
                              const std::vector<double>& cuts) {
  const GroupedSeries g = group_points(points);
  const SegmentCost cost(g);
  double total = 0.0;
  std::size_t begin = 0;
  for (double c : cuts) {
    std::size_t end = begin;
    while (end < g.value.size() && g.value[end] < c) ++end;
    if (end > begin) total += cost(begin, end - 1);
    begin = end;
  }
  if (begin < g.value.size()) total += cost(begin, g.value.size() - 1);
  return total;
}

BinProposal propose_bins(const std::vector<std::pair<double, double>>& points,
                         const std::string& feature, const SegmentationConfig& config) {
  const GroupedSeries g = group_points(points);
  const std::size_t u = g.value.size();
  if (static_cast<int>(u) < config.max_bins)
    throw make_error("TooFewDistinctValues", feature + " has " + std::to_string(u) +
                                                 " distinct values, need >= " +
                                                 std::to_string(config.max_bins));
  const SegmentCost cost(g);
  double penalty = config.penalty;
  if (penalty < 0.0) penalty = estimate_noise_var(g) * std::log(std::max(2.0, g.n_rows));
  penalty *= config.penalty_factor;

  const int kmax = config.max_bins;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[k][j]: minimal SSE covering values [0..j] with k+1 segments.
  std::vector<std::vector<double>> best(static_cast<std::size_t>(kmax),
                                        std::vector<double>(u, kInf));
  std::vector<std::vector<std::size_t>> split(static_cast<std::size_t>(kmax),
                                              std::vector<std::size_t>(u, 0));
  for (std::size_t j = 0; j < u; ++j) best[0][j] = cost(0, j);
  for (int k = 1; k < kmax; ++k) {
    for (std::size_t j = static_cast<std::size_t>(k); j < u; ++j) {
      for (std::size_t s = static_cast<std::size_t>(k); s <= j; ++s) {
        const double c = best[static_cast<std::size_t>(k - 1)][s - 1] + cost(s, j);
        if (c < best[static_cast<std::size_t>(k)][j]) {
          best[static_cast<std::size_t>(k)][j] = c;
          split[static_cast<std::size_t>(k)][j] = s;
        }
      }
    }
  }

  int best_k = 0;
  double best_obj = best[0][u - 1] + penalty;
  for (int k = 1; k < kmax; ++k) {
    const double obj = best[static_cast<std::size_t>(k)][u - 1] + penalty * (k + 1);
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best_k = k;
    }
  }

  BinProposal out;
  out.penalty_used = penalty;
  out.n_segments = best_k + 1;
  out.objective = best_obj;
  out.bins.feature = feature;
  out.bins.reference_bin = 0;
  std::size_t j = u - 1;
  std::vector<double> cuts;
  for (int k = best_k; k >= 1; --k) {
    const std::size_t s = split[static_cast<std::size_t>(k)][j];
    cuts.push_back(g.value[s]);
    j = s - 1;
  }
  std::reverse(cuts.begin(), cuts.end());
  out.bins.cuts = std::move(cuts);
  return out;
}

InteractionSelection select_interactions(const std::vector<RankedPair>& ranking, int top_k,
                                         const std::string& segmentation_var) {
  InteractionSelection out;
  const int k = std::min<int>(top_k, static_cast<int>(ranking.size()));
  int with_seg_var = 0;
  for (int i = 0; i < k; ++i)
    if (ranking[static_cast<std::size_t>(i)].feature_a == segmentation_var ||
        ranking[static_cast<std::size_t>(i)].feature_b == segmentation_var)
      ++with_seg_var;
  out.segmentation_share = k > 0 ? static_cast<double>(with_seg_var) / k : 0.0;
  out.recommend_segmentation = k > 0 && 2 * with_seg_var >= k;
  for (int i = 0; i < k; ++i) {
    const auto& p = ranking[static_cast<std::size_t>(i)];
    const bool involves_seg = p.feature_a == segmentation_var || p.feature_b == segmentation_var;
    if (involves_seg && out.recommend_segmentation) continue;
    out.pairs.emplace_back(p.feature_a, p.feature_b);
  }
  return out;
}

nlohmann::json SpecProposal::to_json() const {
  nlohmann::json j;
  j["bins"] = nlohmann::json::array();
  for (const auto& b : bins) {
    nlohmann::json e;
    e["feature"] = b.bins.feature;
    e["cuts"] = b.bins.cuts;
    e["objective"] = b.objective;
    e["penalty"] = b.penalty_used;
    e["n_segments"] = b.n_segments;
    j["bins"].push_back(e);
  }
  j["interactions"] = nlohmann::json::array();
  for (const auto& p : interactions)
    j["interactions"].push_back({{"a", p.feature_a}, {"b", p.feature_b}, {"score", p.score}});
  j["recommend_segmentation"] = selection.recommend_segmentation;
  j["segmentation_share"] = selection.segmentation_share;
  j["model_hash"] = model_hash;
  j["data_hash"] = data_hash;
  // The cut search is an explicit algorithmic stand-in for a judgment call
  // made visually in the source workflow.
  j["method"] = "dp_segmentation+interaction_ranking";
  return j;
}

namespace {

// Maps a ranked raw-feature pair onto design-matrix product terms.
// numeric x categorical spans every level, so the numeric main effect is
// dropped to avoid exact collinearity.
void map_pair(const Dataset& data, const FeatureSpec& spec,
              const std::pair<std::string, std::string>& pair,
              std::vector<std::pair<std::string, std::string>>& terms,
              std::set<std::string>& drop_main) {
  auto kind_of = [&](const std::string& name) { return data.col(name).kind; };

  auto operands_for = [&](const std::string& name, bool partner_categorical)
      -> std::vector<std::string> {
    if (kind_of(name) == ColumnKind::Categorical) {
      const auto& col = data.col(name);
      std::string ref;
      for (const auto& t : spec.categorical)
        if (t.name == name) ref = t.reference;
      std::vector<std::string> ops;
      for (const auto& lvl : col.levels) {
        if (!partner_categorical) {
          ops.push_back(name + "=" + lvl);  // full partition
        } else if (lvl != ref) {
          ops.push_back(name + "=" + lvl);
        }
      }
      return ops;
    }
    for (const auto& t : spec.continuous)
      if (t.name == name && t.bins) {
        std::vector<std::string> ops;
        for (int b = 0; b < t.bins->n_bins(); ++b)
          if (b != t.bins->reference_bin) ops.push_back(t.bins->bin_name(b));
        return ops;
      }
    return {name};
  };

  const bool a_cat = kind_of(pair.first) == ColumnKind::Categorical;
  const bool b_cat = kind_of(pair.second) == ColumnKind::Categorical;

  if (a_cat != b_cat) {
    const std::string& cat = a_cat ? pair.first : pair.second;
    const std::string& num = a_cat ? pair.second : pair.first;
    const auto num_ops = operands_for(num, true);
    const bool num_binned = num_ops.size() > 1 || num_ops.front() != num;
    // An identity numeric interacts with every level and loses its main
    // effect; bin dummies interact with non-reference levels only.
    const auto cat_ops = operands_for(cat, num_binned);
    for (const auto& no : num_ops)
      for (const auto& co : cat_ops) terms.emplace_back(no, co);
    if (!num_binned) drop_main.insert(num);
  } else {
    const auto a_ops = operands_for(pair.first, true);
    const auto b_ops = operands_for(pair.second, true);
    for (const auto& ao : a_ops)
      for (const auto& bo : b_ops) terms.emplace_back(ao, bo);
  }
}

}  // namespace

FeatureSpec emit_mnl_spec(const FeatureSpec& baseline, const Dataset& data,
                          const SpecProposal& proposal, const EmitConfig& config) {
  FeatureSpec spec = baseline;

  for (const auto& bp : proposal.bins) {
    bool found = false;
    for (auto& t : spec.continuous)
      if (t.name == bp.bins.feature) {
        t.bins = bp.bins;
        found = true;
      }
    if (!found) throw make_error("SchemaMismatch", "bin proposal for undeclared feature " + bp.bins.feature);
  }

  std::set<std::string> drop_main;
  std::vector<std::pair<std::string, std::string>> terms;
  for (const auto& p : proposal.interactions) {
    if (!data.has_column(p.feature_a) || !data.has_column(p.feature_b))
      throw make_error("SchemaMismatch", "interaction names unknown feature " + p.feature_a + "/" +
                                             p.feature_b);
    map_pair(data, spec, {p.feature_a, p.feature_b}, terms, drop_main);
  }

  if (config.apply_manual_template) {
    // Head age enters only as the >60 indicator; presence-of-children and
    // birth effects are split by parental age bins.
    for (auto& t : spec.continuous)
      if (t.name == "hh_age" && !t.bins) {
        BinSpec b;
        b.feature = "hh_age";
        b.cuts = {61.0};
        b.reference_bin = 0;
        t.bins = std::move(b);
      }
    const char* age_ops[3] = {"hh_age<27", "hh_age:27-35", "hh_age>35"};
    for (const char* dev : {"kid_4", "kid_5_11", "birth"}) {
      if (!data.has_column(dev)) continue;
      drop_main.insert(dev);
      for (const char* op : age_ops) terms.emplace_back(dev, op);
    }
  }

  if (!drop_main.empty())
    std::erase_if(spec.continuous,
                  [&](const ContinuousTerm& t) { return drop_main.count(t.name) > 0; });

  // De-duplicate while preserving order.
  std::set<std::pair<std::string, std::string>> seen(spec.interactions.begin(),
                                                     spec.interactions.end());
  for (auto& t : terms)
    if (seen.insert(t).second) spec.interactions.push_back(t);

  if (proposal.selection.recommend_segmentation) spec.segment = Segment::MultiVehicle;
  return spec;
}

FeatureSpec spec_for_segment(const FeatureSpec& spec, Segment segment) {
  FeatureSpec out = spec;
  out.segment = segment;
  if (segment == Segment::OneVehicle)
    std::erase_if(out.continuous, [](const ContinuousTerm& t) { return t.name == "n_veh"; });
  return out;
}

}  // namespace fleetchurn
