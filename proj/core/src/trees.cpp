#include "fleetchurn/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fleetchurn/error.hpp"
#include "fleetchurn/rng.hpp"

namespace fleetchurn {

int FeatureSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

FeatureTable FeatureTable::from_dataset(const Dataset& data) {
  FeatureTable t;
  for (const auto& c : data.columns) {
    t.schema.names.push_back(c.name);
    t.schema.kinds.push_back(c.kind == ColumnKind::Categorical ? FeatureKind::Categorical
                                                               : FeatureKind::Numeric);
    t.schema.levels.push_back(c.levels);
  }
  const std::size_t n = data.n_rows();
  const std::size_t m = data.columns.size();
  t.values.resize(n * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) t.values[i * m + j] = data.columns[j].values[i];
  t.labels = data.label;
  return t;
}

FeatureTable FeatureTable::select_rows(const std::vector<std::size_t>& idx) const {
  FeatureTable t;
  t.schema = schema;
  const std::size_t m = static_cast<std::size_t>(schema.size());
  t.values.reserve(idx.size() * m);
  for (std::size_t i : idx)
    t.values.insert(t.values.end(), values.begin() + static_cast<std::ptrdiff_t>(i * m),
                    values.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
  if (!labels.empty()) {
    t.labels.reserve(idx.size());
    for (std::size_t i : idx) t.labels.push_back(labels[i]);
  }
  return t;
}

bool TreeNode::goes_left(double v, FeatureKind kind) const {
  if (kind == FeatureKind::Numeric) return v < threshold;
  const int code = static_cast<int>(v);
  return std::binary_search(left_levels.begin(), left_levels.end(), code);
}

double Tree::predict(std::span<const double> row, const FeatureSchema& schema) const {
  int id = 0;
  while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
    const auto f = static_cast<std::size_t>(nd.feature);
    id = nd.goes_left(row[f], schema.kinds[f]) ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(id)].value;
}

double Tree::leaf_cover_sum() const {
  double s = 0.0;
  for (const auto& nd : nodes)
    if (nd.is_leaf()) s += nd.cover;
  return s;
}

std::array<double, kNumClasses> softmax3(const std::array<double, kNumClasses>& m) {
  const double mx = std::max({m[0], m[1], m[2]});
  std::array<double, kNumClasses> e{std::exp(m[0] - mx), std::exp(m[1] - mx), std::exp(m[2] - mx)};
  const double s = e[0] + e[1] + e[2];
  return {e[0] / s, e[1] / s, e[2] / s};
}

std::array<double, kNumClasses> TreeEnsemble::predict_margin(std::span<const double> row) const {
  if (static_cast<int>(row.size()) != schema.size())
    throw make_error("SchemaMismatch", "row has " + std::to_string(row.size()) + " features, model expects " +
                                           std::to_string(schema.size()));
  std::array<double, kNumClasses> m = base_margin;
  for (const auto& t : trees) m[static_cast<std::size_t>(t.cls)] += t.predict(row, schema);
  return m;
}

std::array<double, kNumClasses> TreeEnsemble::predict_proba(std::span<const double> row) const {
  return softmax3(predict_margin(row));
}

int TreeEnsemble::predict_class(std::span<const double> row) const {
  const auto m = predict_margin(row);
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (m[static_cast<std::size_t>(c)] > m[static_cast<std::size_t>(best)]) best = c;
  return best;
}

void TreeEnsemble::validate_covers() const {
  for (const auto& t : trees) {
    for (const auto& nd : t.nodes) {
      if (nd.cover <= 0.0) throw make_error("ZeroCoverNode", "non-positive node cover");
      if (!nd.is_leaf()) {
        const double child_sum = t.nodes[static_cast<std::size_t>(nd.left)].cover +
                                 t.nodes[static_cast<std::size_t>(nd.right)].cover;
        if (std::abs(child_sum - nd.cover) > 1e-6 * std::max(1.0, nd.cover))
          throw make_error("ZeroCoverNode", "cover bookkeeping broken: parent " +
                                                std::to_string(nd.cover) + " != children " +
                                                std::to_string(child_sum));
      }
    }
  }
}

double multiclass_log_loss(const TreeEnsemble& model, const FeatureTable& data) {
  const std::size_t n = data.n_rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = model.predict_proba(data.row(i));
    const double pt = std::max(p[static_cast<std::size_t>(data.labels[i])], 1e-15);
    total -= std::log(pt);
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Shared histogram machinery

namespace {

struct FeatureBins {
  bool categorical = false;
  int n_bins = 0;
  std::vector<std::uint16_t> row_bin;     // per training row
  std::vector<double> split_threshold;    // numeric: threshold if split between bin b and b+1
  std::vector<int> scan_order;            // categorical: level scan order
};

// Bins one numeric feature. Exact when the number of distinct values fits in
// n_bins (thresholds at midpoints between adjacent distinct values).
FeatureBins bin_numeric(const FeatureTable& t, int feature, int max_bins) {
  const std::size_t n = t.n_rows();
  const std::size_t m = static_cast<std::size_t>(t.schema.size());
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = t.values[i * m + static_cast<std::size_t>(feature)];
  std::vector<double> uniq = vals;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> uppers;  // upper boundary value of each bin (inclusive)
  if (static_cast<int>(uniq.size()) <= max_bins) {
    uppers = uniq;
  } else {
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    for (int b = 1; b <= max_bins; ++b) {
      std::size_t rank = std::min(n - 1, n * static_cast<std::size_t>(b) / static_cast<std::size_t>(max_bins));
      if (rank > 0) --rank;
      uppers.push_back(sorted[rank]);
    }
    uppers.back() = sorted.back();
    uppers.erase(std::unique(uppers.begin(), uppers.end()), uppers.end());
  }

  FeatureBins fb;
  fb.categorical = false;
  fb.n_bins = static_cast<int>(uppers.size());
  fb.row_bin.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::lower_bound(uppers.begin(), uppers.end(), vals[i]);
    fb.row_bin[i] = static_cast<std::uint16_t>(std::min<std::size_t>(
        static_cast<std::size_t>(it - uppers.begin()), uppers.size() - 1));
  }
  fb.split_threshold.resize(static_cast<std::size_t>(fb.n_bins));
  for (int b = 0; b + 1 < fb.n_bins; ++b)
    fb.split_threshold[static_cast<std::size_t>(b)] =
        0.5 * (uppers[static_cast<std::size_t>(b)] + uppers[static_cast<std::size_t>(b) + 1]);
  return fb;
}

FeatureBins bin_categorical(const FeatureTable& t, int feature, std::vector<int> scan_order) {
  const std::size_t n = t.n_rows();
  const std::size_t m = static_cast<std::size_t>(t.schema.size());
  FeatureBins fb;
  fb.categorical = true;
  fb.n_bins = static_cast<int>(t.schema.levels[static_cast<std::size_t>(feature)].size());
  fb.row_bin.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    fb.row_bin[i] = static_cast<std::uint16_t>(t.values[i * m + static_cast<std::size_t>(feature)]);
  fb.scan_order = std::move(scan_order);
  return fb;
}

// Out-of-fold Laplace-smoothed transaction-rate statistic per level, used to
// order categorical levels before prefix scanning. "Transaction" means any
// class other than the middle (reference) class.
std::vector<int> target_statistic_order(const FeatureTable& t, int feature) {
  const std::size_t n = t.n_rows();
  const std::size_t m = static_cast<std::size_t>(t.schema.size());
  const int n_levels = static_cast<int>(t.schema.levels[static_cast<std::size_t>(feature)].size());
  constexpr int kFolds = 5;
  constexpr double kSmoothing = 10.0;

  double prior_num = 0.0;
  for (std::size_t i = 0; i < n; ++i) prior_num += t.labels[i] != Outcome::Kept ? 1.0 : 0.0;
  const double prior = n ? prior_num / static_cast<double>(n) : 0.5;

  std::vector<double> count(static_cast<std::size_t>(n_levels * kFolds), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(n_levels * kFolds), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int lvl = static_cast<int>(t.values[i * m + static_cast<std::size_t>(feature)]);
    const int fold = static_cast<int>(i % kFolds);
    count[static_cast<std::size_t>(lvl * kFolds + fold)] += 1.0;
    hits[static_cast<std::size_t>(lvl * kFolds + fold)] += t.labels[i] != Outcome::Kept ? 1.0 : 0.0;
  }
  std::vector<double> stat(static_cast<std::size_t>(n_levels), 0.0);
  for (int l = 0; l < n_levels; ++l) {
    double acc = 0.0;
    for (int f = 0; f < kFolds; ++f) {
      double c = 0.0, h = 0.0;
      for (int g = 0; g < kFolds; ++g) {
        if (g == f) continue;
        c += count[static_cast<std::size_t>(l * kFolds + g)];
        h += hits[static_cast<std::size_t>(l * kFolds + g)];
      }
      acc += (h + kSmoothing * prior) / (c + kSmoothing);
    }
    stat[static_cast<std::size_t>(l)] = acc / kFolds;
  }
  std::vector<int> order(static_cast<std::size_t>(n_levels));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (stat[static_cast<std::size_t>(a)] != stat[static_cast<std::size_t>(b)])
      return stat[static_cast<std::size_t>(a)] < stat[static_cast<std::size_t>(b)];
    return a < b;
  });
  return order;
}

struct SplitCandidate {
  double gain = -1.0;
  int feature = -1;
  int scan_pos = -1;  // numeric: last bin going left; categorical: prefix end in scan order
  bool one_hot = false;
};

struct GradHist {
  std::vector<double> g, h, c;
  void reset(int n_bins) {
    g.assign(static_cast<std::size_t>(n_bins), 0.0);
    h.assign(static_cast<std::size_t>(n_bins), 0.0);
    c.assign(static_cast<std::size_t>(n_bins), 0.0);
  }
};

double leaf_objective(double g, double h, double l2) { return g * g / (h + l2); }

// Scans one feature's histogram for the best split of a leaf.
void scan_feature(const FeatureBins& fb, const GradHist& hist, double sum_g, double sum_h,
                  double sum_c, double min_child, double l2, CatMode cat_mode, int feature,
                  SplitCandidate& best) {
  const double parent_obj = leaf_objective(sum_g, sum_h, l2);
  // Features and positions are scanned in a fixed ascending order, so keeping
  // the current best on exact ties is deterministic.
  auto consider = [&](double gl, double hl, double cl, int pos, bool one_hot) {
    const double cr = sum_c - cl;
    if (cl < min_child || cr < min_child) return;
    const double gain = leaf_objective(gl, hl, l2) + leaf_objective(sum_g - gl, sum_h - hl, l2) -
                        parent_obj;
    if (gain > best.gain) {
      best.gain = gain;
      best.feature = feature;
      best.scan_pos = pos;
      best.one_hot = one_hot;
    }
  };
  if (!fb.categorical) {
    double gl = 0, hl = 0, cl = 0;
    for (int b = 0; b + 1 < fb.n_bins; ++b) {
      gl += hist.g[static_cast<std::size_t>(b)];
      hl += hist.h[static_cast<std::size_t>(b)];
      cl += hist.c[static_cast<std::size_t>(b)];
      consider(gl, hl, cl, b, false);
    }
  } else if (cat_mode == CatMode::OneHot) {
    for (int b = 0; b < fb.n_bins; ++b)
      consider(hist.g[static_cast<std::size_t>(b)], hist.h[static_cast<std::size_t>(b)],
               hist.c[static_cast<std::size_t>(b)], b, true);
  } else {
    double gl = 0, hl = 0, cl = 0;
    for (std::size_t k = 0; k + 1 < fb.scan_order.size(); ++k) {
      const int lvl = fb.scan_order[k];
      gl += hist.g[static_cast<std::size_t>(lvl)];
      hl += hist.h[static_cast<std::size_t>(lvl)];
      cl += hist.c[static_cast<std::size_t>(lvl)];
      consider(gl, hl, cl, static_cast<int>(k), false);
    }
  }
}

struct LeafState {
  int node_id = 0;
  std::size_t begin = 0, end = 0;  // range in the row index array
  double sum_g = 0, sum_h = 0;
  SplitCandidate best;
};

}  // namespace

TreeEnsemble train_gbm(const FeatureTable& train, const GbmConfig& config,
                       const FeatureTable* validation) {
  const std::size_t n = train.n_rows();
  const int m = train.schema.size();
  if (n == 0) throw make_error("DegenerateLabels", "empty training set");
  for (double v : train.values)
    if (!std::isfinite(v)) throw make_error("NonFiniteValue", "NaN/Inf in training features");

  std::array<std::size_t, kNumClasses> class_count{0, 0, 0};
  for (Outcome y : train.labels) class_count[static_cast<std::size_t>(y)]++;
  int present = 0;
  for (auto c : class_count) present += c > 0 ? 1 : 0;
  if (present < 2) throw make_error("DegenerateLabels", "training labels contain a single class");

  TreeEnsemble model;
  model.kind = ModelKind::Gbm;
  model.schema = train.schema;
  model.seed = config.seed;
  {
    nlohmann::json cfg;
    cfg["n_rounds"] = config.n_rounds;
    cfg["learning_rate"] = config.learning_rate;
    cfg["max_leaves"] = config.max_leaves;
    cfg["min_child_cover"] = config.min_child_cover;
    cfg["n_histogram_bins"] = config.n_histogram_bins;
    cfg["l2"] = config.l2;
    cfg["cat_mode"] = config.cat_mode == CatMode::TargetStatistic ? "target_statistic" : "one_hot";
    cfg["early_stop_rounds"] = config.early_stop_rounds;
    model.config_json = cfg.dump();
  }
  // Base margins at smoothed log class priors.
  for (int c = 0; c < kNumClasses; ++c)
    model.base_margin[static_cast<std::size_t>(c)] =
        std::log((static_cast<double>(class_count[static_cast<std::size_t>(c)]) + 1.0) /
                 (static_cast<double>(n) + 3.0));

  std::vector<FeatureBins> bins(static_cast<std::size_t>(m));
  for (int f = 0; f < m; ++f) {
    if (train.schema.kinds[static_cast<std::size_t>(f)] == FeatureKind::Categorical)
      bins[static_cast<std::size_t>(f)] = bin_categorical(train, f, target_statistic_order(train, f));
    else
      bins[static_cast<std::size_t>(f)] = bin_numeric(train, f, config.n_histogram_bins);
  }

  std::vector<double> margin(n * kNumClasses);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < kNumClasses; ++c)
      margin[i * kNumClasses + static_cast<std::size_t>(c)] = model.base_margin[static_cast<std::size_t>(c)];
  std::vector<double> valid_margin;
  if (validation) {
    if (!(validation->schema == train.schema)) throw make_error("SchemaMismatch", "validation schema differs");
    valid_margin.resize(validation->n_rows() * kNumClasses);
    for (std::size_t i = 0; i < validation->n_rows(); ++i)
      for (int c = 0; c < kNumClasses; ++c)
        valid_margin[i * kNumClasses + static_cast<std::size_t>(c)] =
            model.base_margin[static_cast<std::size_t>(c)];
  }

  auto loss_of = [](const std::vector<double>& marg, const std::vector<Outcome>& labels) {
    const std::size_t rows = labels.size();
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      std::array<double, kNumClasses> mm{marg[i * kNumClasses], marg[i * kNumClasses + 1],
                                         marg[i * kNumClasses + 2]};
      const auto p = softmax3(mm);
      total -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-15));
    }
    return total / static_cast<double>(rows);
  };

  std::vector<double> grad(n), hess(n);
  std::vector<std::uint32_t> row_order(n);
  std::vector<std::uint32_t> scratch(n);
  GradHist hist;

  double prev_loss = loss_of(margin, train.labels);
  double best_valid = std::numeric_limits<double>::infinity();
  int best_round = -1;

  struct RoundLeaf {
    std::size_t tree_idx;
    std::size_t node_idx;
    std::vector<std::uint32_t> rows;
  };

  for (int round = 0; round < config.n_rounds; ++round) {
    std::vector<RoundLeaf> round_leaves;
    const std::vector<double> margin_before = margin;

    for (int cls = 0; cls < kNumClasses; ++cls) {
      for (std::size_t i = 0; i < n; ++i) {
        std::array<double, kNumClasses> mm{margin[i * kNumClasses], margin[i * kNumClasses + 1],
                                           margin[i * kNumClasses + 2]};
        const auto p = softmax3(mm);
        const double pc = p[static_cast<std::size_t>(cls)];
        if (!std::isfinite(pc)) throw make_error("NonFiniteGradient", "softmax overflow");
        const double y = train.labels[i] == static_cast<Outcome>(cls) ? 1.0 : 0.0;
        grad[i] = pc - y;
        hess[i] = std::max(pc * (1.0 - pc), 1e-16);
      }

      Tree tree;
      tree.cls = cls;
      std::iota(row_order.begin(), row_order.end(), 0u);
      TreeNode root;
      root.cover = static_cast<double>(n);
      tree.nodes.push_back(root);

      std::vector<LeafState> leaves;
      auto compute_best = [&](LeafState& leaf) {
        leaf.best = SplitCandidate{};
        double sg = 0, sh = 0;
        for (std::size_t k = leaf.begin; k < leaf.end; ++k) {
          sg += grad[row_order[k]];
          sh += hess[row_order[k]];
        }
        leaf.sum_g = sg;
        leaf.sum_h = sh;
        const double count = static_cast<double>(leaf.end - leaf.begin);
        for (int f = 0; f < m; ++f) {
          const FeatureBins& fb = bins[static_cast<std::size_t>(f)];
          hist.reset(fb.n_bins);
          for (std::size_t k = leaf.begin; k < leaf.end; ++k) {
            const std::uint32_t r = row_order[k];
            const int b = fb.row_bin[r];
            hist.g[static_cast<std::size_t>(b)] += grad[r];
            hist.h[static_cast<std::size_t>(b)] += hess[r];
            hist.c[static_cast<std::size_t>(b)] += 1.0;
          }
          scan_feature(fb, hist, sg, sh, count, config.min_child_cover, config.l2, config.cat_mode,
                       f, leaf.best);
        }
      };

      LeafState root_leaf;
      root_leaf.node_id = 0;
      root_leaf.begin = 0;
      root_leaf.end = n;
      compute_best(root_leaf);
      leaves.push_back(std::move(root_leaf));

      int n_leaves = 1;
      while (n_leaves < config.max_leaves) {
        int pick = -1;
        for (std::size_t li = 0; li < leaves.size(); ++li) {
          if (leaves[li].best.feature < 0 || leaves[li].best.gain <= 1e-12) continue;
          if (pick < 0 || leaves[li].best.gain > leaves[static_cast<std::size_t>(pick)].best.gain ||
              (leaves[li].best.gain == leaves[static_cast<std::size_t>(pick)].best.gain &&
               leaves[li].node_id < leaves[static_cast<std::size_t>(pick)].node_id))
            pick = static_cast<int>(li);
        }
        if (pick < 0) break;
        LeafState leaf = leaves[static_cast<std::size_t>(pick)];
        leaves.erase(leaves.begin() + pick);

        const SplitCandidate& sp = leaf.best;
        const FeatureBins& fb = bins[static_cast<std::size_t>(sp.feature)];
        TreeNode& node = tree.nodes[static_cast<std::size_t>(leaf.node_id)];
        node.feature = sp.feature;
        std::vector<bool> go_left_bin;
        if (!fb.categorical) {
          node.threshold = fb.split_threshold[static_cast<std::size_t>(sp.scan_pos)];
          go_left_bin.assign(static_cast<std::size_t>(fb.n_bins), false);
          for (int b = 0; b <= sp.scan_pos; ++b) go_left_bin[static_cast<std::size_t>(b)] = true;
        } else {
          go_left_bin.assign(static_cast<std::size_t>(fb.n_bins), false);
          if (sp.one_hot) {
            go_left_bin[static_cast<std::size_t>(sp.scan_pos)] = true;
            node.left_levels = {sp.scan_pos};
          } else {
            for (int k = 0; k <= sp.scan_pos; ++k) {
              go_left_bin[static_cast<std::size_t>(fb.scan_order[static_cast<std::size_t>(k)])] = true;
              node.left_levels.push_back(fb.scan_order[static_cast<std::size_t>(k)]);
            }
            std::sort(node.left_levels.begin(), node.left_levels.end());
          }
        }

        // Stable partition of the leaf's rows.
        std::size_t w = leaf.begin;
        std::size_t scratch_n = 0;
        for (std::size_t k = leaf.begin; k < leaf.end; ++k) {
          const std::uint32_t r = row_order[k];
          if (go_left_bin[fb.row_bin[r]])
            row_order[w++] = r;
          else
            scratch[scratch_n++] = r;
        }
        const std::size_t mid = w;
        for (std::size_t k = 0; k < scratch_n; ++k) row_order[mid + k] = scratch[k];

        TreeNode left_node, right_node;
        left_node.cover = static_cast<double>(mid - leaf.begin);
        right_node.cover = static_cast<double>(leaf.end - mid);
        node.left = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(left_node);
        node.right = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(right_node);

        LeafState lchild, rchild;
        lchild.node_id = node.left;
        lchild.begin = leaf.begin;
        lchild.end = mid;
        rchild.node_id = node.right;
        rchild.begin = mid;
        rchild.end = leaf.end;
        compute_best(lchild);
        compute_best(rchild);
        leaves.push_back(std::move(lchild));
        leaves.push_back(std::move(rchild));
        ++n_leaves;
      }

      for (const LeafState& leaf : leaves) {
        TreeNode& node = tree.nodes[static_cast<std::size_t>(leaf.node_id)];
        node.value = config.learning_rate * (-leaf.sum_g / (leaf.sum_h + config.l2));
        RoundLeaf rl;
        rl.tree_idx = model.trees.size();
        rl.node_idx = static_cast<std::size_t>(leaf.node_id);
        rl.rows.assign(row_order.begin() + static_cast<std::ptrdiff_t>(leaf.begin),
                       row_order.begin() + static_cast<std::ptrdiff_t>(leaf.end));
        round_leaves.push_back(std::move(rl));
      }
      model.trees.push_back(std::move(tree));
    }

    auto apply_round = [&]() {
      margin = margin_before;
      for (const RoundLeaf& rl : round_leaves) {
        const Tree& t = model.trees[rl.tree_idx];
        const double v = t.nodes[rl.node_idx].value;
        for (std::uint32_t r : rl.rows)
          margin[static_cast<std::size_t>(r) * kNumClasses + static_cast<std::size_t>(t.cls)] += v;
      }
    };
    apply_round();

    // Line search on the round step: halve the three trees' leaf values until
    // the training loss does not increase.
    double cur_loss = loss_of(margin, train.labels);
    for (int halvings = 0; cur_loss > prev_loss + 1e-12 && halvings < 20; ++halvings) {
      for (const RoundLeaf& rl : round_leaves)
        model.trees[rl.tree_idx].nodes[rl.node_idx].value *= 0.5;
      apply_round();
      cur_loss = loss_of(margin, train.labels);
    }
    prev_loss = cur_loss;
    model.train_log_loss.push_back(cur_loss);

    if (validation) {
      const std::size_t nv = validation->n_rows();
      for (std::size_t tix = model.trees.size() - kNumClasses; tix < model.trees.size(); ++tix) {
        const Tree& t = model.trees[tix];
        for (std::size_t i = 0; i < nv; ++i)
          valid_margin[i * kNumClasses + static_cast<std::size_t>(t.cls)] +=
              t.predict(validation->row(i), model.schema);
      }
      const double vloss = loss_of(valid_margin, validation->labels);
      if (vloss < best_valid - 1e-9) {
        best_valid = vloss;
        best_round = round;
      } else if (config.early_stop_rounds > 0 && round - best_round >= config.early_stop_rounds) {
        break;
      }
    }
  }

  if (validation && best_round >= 0 && config.early_stop_rounds > 0) {
    const std::size_t keep = static_cast<std::size_t>(best_round + 1) * kNumClasses;
    if (model.trees.size() > keep) model.trees.resize(keep);
    model.train_log_loss.resize(static_cast<std::size_t>(best_round + 1));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Random forest

namespace {

struct RfGrower {
  const FeatureTable& data;
  const RfConfig& config;
  const std::vector<FeatureBins>& bins;
  Rng& rng;
  int mtry;

  struct RfNode {
    int feature = -1;
    double threshold = 0.0;
    std::vector<int> left_levels;
    int left = -1, right = -1;
    double cover = 0.0;
    std::array<double, kNumClasses> class_count{0, 0, 0};
  };
  std::vector<RfNode> nodes;

  int grow(std::vector<std::uint32_t>& rows, std::size_t begin, std::size_t end, int depth,
           std::vector<std::uint32_t>& scratch) {
    RfNode node;
    node.cover = static_cast<double>(end - begin);
    for (std::size_t k = begin; k < end; ++k)
      node.class_count[static_cast<std::size_t>(data.labels[rows[k]])] += 1.0;
    const int node_id = static_cast<int>(nodes.size());
    nodes.push_back(node);

    int n_present = 0;
    for (double c : node.class_count) n_present += c > 0 ? 1 : 0;
    const double n_node = node.cover;
    const bool depth_ok = config.max_depth <= 0 || depth < config.max_depth;
    if (n_present <= 1 || !depth_ok || n_node < 2.0 * config.min_child_cover) return node_id;

    // Feature subsample, sorted for a deterministic scan order.
    const int m = data.schema.size();
    std::vector<int> feats(static_cast<std::size_t>(m));
    std::iota(feats.begin(), feats.end(), 0);
    for (int k = 0; k < mtry && k < m; ++k) {
      const auto j = static_cast<std::size_t>(k) + rng.uniform_int(static_cast<std::uint64_t>(m - k));
      std::swap(feats[static_cast<std::size_t>(k)], feats[j]);
    }
    feats.resize(static_cast<std::size_t>(std::min(mtry, m)));
    std::sort(feats.begin(), feats.end());

    auto impurity = [](const std::array<double, kNumClasses>& c, double total) {
      if (total <= 0) return 0.0;
      double s = 0.0;
      for (double x : c) s += (x / total) * (x / total);
      return 1.0 - s;
    };
    const double parent_imp = impurity(node.class_count, n_node);

    double best_gain = 1e-12;
    int best_feature = -1, best_pos = -1;
    std::vector<int> best_left_levels;
    double best_thr = 0.0;

    std::vector<std::array<double, kNumClasses>> hist;
    for (int f : feats) {
      const FeatureBins& fb = bins[static_cast<std::size_t>(f)];
      hist.assign(static_cast<std::size_t>(fb.n_bins), {0, 0, 0});
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint32_t r = rows[k];
        hist[fb.row_bin[r]][static_cast<std::size_t>(data.labels[r])] += 1.0;
      }
      // Scan order: bin order for numeric, within-node transaction-rate order
      // for categorical.
      std::vector<int> order(static_cast<std::size_t>(fb.n_bins));
      std::iota(order.begin(), order.end(), 0);
      if (fb.categorical) {
        std::vector<double> stat(static_cast<std::size_t>(fb.n_bins));
        for (int b = 0; b < fb.n_bins; ++b) {
          const auto& c = hist[static_cast<std::size_t>(b)];
          const double tot = c[0] + c[1] + c[2];
          stat[static_cast<std::size_t>(b)] = (c[0] + c[2] + 1.0) / (tot + 2.0);
        }
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          if (stat[static_cast<std::size_t>(a)] != stat[static_cast<std::size_t>(b)])
            return stat[static_cast<std::size_t>(a)] < stat[static_cast<std::size_t>(b)];
          return a < b;
        });
      }
      std::array<double, kNumClasses> left{0, 0, 0};
      double n_left = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const auto& c = hist[static_cast<std::size_t>(order[k])];
        for (int j = 0; j < kNumClasses; ++j) left[static_cast<std::size_t>(j)] += c[static_cast<std::size_t>(j)];
        n_left += c[0] + c[1] + c[2];
        const double n_right = n_node - n_left;
        if (n_left < config.min_child_cover || n_right < config.min_child_cover) continue;
        std::array<double, kNumClasses> right;
        for (int j = 0; j < kNumClasses; ++j)
          right[static_cast<std::size_t>(j)] =
              node.class_count[static_cast<std::size_t>(j)] - left[static_cast<std::size_t>(j)];
        const double gain = parent_imp - (n_left * impurity(left, n_left) +
                                          n_right * impurity(right, n_right)) /
                                             n_node;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_pos = static_cast<int>(k);
          if (fb.categorical) {
            best_left_levels.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1));
            std::sort(best_left_levels.begin(), best_left_levels.end());
          } else {
            best_thr = fb.split_threshold[k];
          }
        }
      }
    }
    if (best_feature < 0) return node_id;

    const FeatureBins& fb = bins[static_cast<std::size_t>(best_feature)];
    std::vector<bool> go_left_bin(static_cast<std::size_t>(fb.n_bins), false);
    if (fb.categorical) {
      for (int lvl : best_left_levels) go_left_bin[static_cast<std::size_t>(lvl)] = true;
    } else {
      for (int b = 0; b <= best_pos; ++b) go_left_bin[static_cast<std::size_t>(b)] = true;
    }
    std::size_t w = begin, scratch_n = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t r = rows[k];
      if (go_left_bin[fb.row_bin[r]])
        rows[w++] = r;
      else
        scratch[scratch_n++] = r;
    }
    const std::size_t mid = w;
    for (std::size_t k = 0; k < scratch_n; ++k) rows[mid + k] = scratch[k];

    nodes[static_cast<std::size_t>(node_id)].feature = best_feature;
    nodes[static_cast<std::size_t>(node_id)].threshold = best_thr;
    nodes[static_cast<std::size_t>(node_id)].left_levels = best_left_levels;
    const int lid = grow(rows, begin, mid, depth + 1, scratch);
    nodes[static_cast<std::size_t>(node_id)].left = lid;
    const int rid = grow(rows, mid, end, depth + 1, scratch);
    nodes[static_cast<std::size_t>(node_id)].right = rid;
    return node_id;
  }
};

}  // namespace

TreeEnsemble train_random_forest(const FeatureTable& train, const RfConfig& config) {
  const std::size_t n = train.n_rows();
  const int m = train.schema.size();
  if (n == 0) throw make_error("DegenerateLabels", "empty training set");
  std::array<std::size_t, kNumClasses> class_count{0, 0, 0};
  for (Outcome y : train.labels) class_count[static_cast<std::size_t>(y)]++;
  int present = 0;
  for (auto c : class_count) present += c > 0 ? 1 : 0;
  if (present < 2) throw make_error("DegenerateLabels", "training labels contain a single class");

  TreeEnsemble model;
  model.kind = ModelKind::RandomForest;
  model.schema = train.schema;
  model.seed = config.seed;
  {
    nlohmann::json cfg;
    cfg["n_trees"] = config.n_trees;
    cfg["max_depth"] = config.max_depth;
    cfg["min_child_cover"] = config.min_child_cover;
    cfg["bootstrap"] = config.bootstrap;
    cfg["mtry"] = config.mtry;
    model.config_json = cfg.dump();
  }

  std::vector<FeatureBins> bins(static_cast<std::size_t>(m));
  for (int f = 0; f < m; ++f) {
    if (train.schema.kinds[static_cast<std::size_t>(f)] == FeatureKind::Categorical) {
      FeatureBins fb = bin_categorical(train, f, {});
      bins[static_cast<std::size_t>(f)] = std::move(fb);
    } else {
      bins[static_cast<std::size_t>(f)] = bin_numeric(train, f, config.n_histogram_bins);
    }
  }

  const int mtry = config.mtry > 0 ? config.mtry
                                   : std::max(1, static_cast<int>(std::floor(std::sqrt(m))));

  for (int t = 0; t < config.n_trees; ++t) {
    Rng rng(derive_seed(config.seed, "rf_tree", static_cast<std::uint64_t>(t)));
    std::vector<std::uint32_t> rows;
    rows.reserve(n);
    if (config.bootstrap) {
      for (std::size_t i = 0; i < n; ++i)
        rows.push_back(static_cast<std::uint32_t>(rng.uniform_int(n)));
      std::sort(rows.begin(), rows.end());
    } else {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), 0u);
    }
    std::vector<std::uint32_t> scratch(rows.size());

    RfGrower grower{train, config, bins, rng, mtry, {}};
    grower.grow(rows, 0, rows.size(), 0, scratch);

    // One structural tree becomes three class trees sharing topology; leaf
    // values are per-class probabilities averaged across the forest.
    for (int cls = 0; cls < kNumClasses; ++cls) {
      Tree tree;
      tree.cls = cls;
      tree.nodes.reserve(grower.nodes.size());
      for (const auto& rn : grower.nodes) {
        TreeNode nd;
        nd.feature = rn.feature;
        nd.threshold = rn.threshold;
        nd.left_levels = rn.left_levels;
        nd.left = rn.left;
        nd.right = rn.right;
        nd.cover = rn.cover;
        if (rn.feature < 0) {
          const double tot = rn.class_count[0] + rn.class_count[1] + rn.class_count[2];
          nd.value = rn.class_count[static_cast<std::size_t>(cls)] / tot /
                     static_cast<double>(config.n_trees);
        }
        tree.nodes.push_back(std::move(nd));
      }
      model.trees.push_back(std::move(tree));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json TreeEnsemble::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = kind == ModelKind::Gbm ? "gbm" : "random_forest";
  nlohmann::json sj;
  sj["names"] = schema.names;
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : schema.kinds) kinds.push_back(k == FeatureKind::Categorical ? "categorical" : "numeric");
  sj["kinds"] = kinds;
  sj["levels"] = schema.levels;
  j["schema"] = sj;
  j["base_margin"] = base_margin;
  j["seed"] = seed;
  j["config"] = config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_json);
  j["train_log_loss"] = train_log_loss;
  nlohmann::json trees_j = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json tj;
    tj["class"] = t.cls;
    nlohmann::json nodes_j = nlohmann::json::array();
    for (const auto& nd : t.nodes) {
      nlohmann::json nj;
      if (nd.is_leaf()) {
        nj["value"] = nd.value;
      } else {
        nj["feature"] = nd.feature;
        if (!nd.left_levels.empty())
          nj["left_levels"] = nd.left_levels;
        else
          nj["threshold"] = nd.threshold;
        nj["left"] = nd.left;
        nj["right"] = nd.right;
      }
      nj["cover"] = nd.cover;
      nodes_j.push_back(std::move(nj));
    }
    tj["nodes"] = std::move(nodes_j);
    trees_j.push_back(std::move(tj));
  }
  j["trees"] = std::move(trees_j);
  return j;
}

TreeEnsemble TreeEnsemble::from_json(const nlohmann::json& j) {
  TreeEnsemble m;
  m.kind = j.at("kind").get<std::string>() == "gbm" ? ModelKind::Gbm : ModelKind::RandomForest;
  const auto& sj = j.at("schema");
  m.schema.names = sj.at("names").get<std::vector<std::string>>();
  for (const auto& k : sj.at("kinds"))
    m.schema.kinds.push_back(k.get<std::string>() == "categorical" ? FeatureKind::Categorical
                                                                   : FeatureKind::Numeric);
  m.schema.levels = sj.at("levels").get<std::vector<std::vector<std::string>>>();
  auto bm = j.at("base_margin").get<std::vector<double>>();
  for (int c = 0; c < kNumClasses; ++c) m.base_margin[static_cast<std::size_t>(c)] = bm[static_cast<std::size_t>(c)];
  m.seed = j.value("seed", 0ull);
  if (j.contains("config")) m.config_json = j["config"].dump();
  if (j.contains("train_log_loss")) m.train_log_loss = j["train_log_loss"].get<std::vector<double>>();
  for (const auto& tj : j.at("trees")) {
    Tree t;
    t.cls = tj.at("class").get<int>();
    for (const auto& nj : tj.at("nodes")) {
      TreeNode nd;
      nd.cover = nj.at("cover").get<double>();
      if (nj.contains("feature")) {
        nd.feature = nj["feature"].get<int>();
        if (nj.contains("left_levels")) nd.left_levels = nj["left_levels"].get<std::vector<int>>();
        if (nj.contains("threshold")) nd.threshold = nj["threshold"].get<double>();
        nd.left = nj.at("left").get<int>();
        nd.right = nj.at("right").get<int>();
      } else {
        nd.value = nj.at("value").get<double>();
      }
      t.nodes.push_back(std::move(nd));
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace fleetchurn
