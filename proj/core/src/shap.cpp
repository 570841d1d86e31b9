#include "fleetchurn/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fleetchurn/error.hpp"
#include "fleetchurn/parallel.hpp"

namespace fleetchurn {

namespace {

// Shapley permutation weight t!(k-1-t)!/k! via a long-double factorial table.
class ShapleyWeights {
 public:
  ShapleyWeights() {
    fact_[0] = 1.0L;
    for (int i = 1; i < kMax; ++i) fact_[i] = fact_[i - 1] * static_cast<long double>(i);
  }
  double operator()(int t, int k) const {
    return static_cast<double>(fact_[t] * fact_[k - 1 - t] / fact_[k]);
  }

 private:
  static constexpr int kMax = 170;
  long double fact_[kMax];
};

const ShapleyWeights& weights() {
  static const ShapleyWeights w;
  return w;
}

// One distinct feature on the current root-to-node path. one_fraction is the
// product of row-branch indicators (0 or 1 exactly), zero_fraction the product
// of cover ratios of the splits taken on this feature.
struct PathEntry {
  int feature;
  double one_fraction;
  double zero_fraction;
};

// Divides poly (coefficients of prod (o_d x + z_d), degree k) by (o x + z).
// o is exactly 0 or 1, so the synthetic division is numerically clean.
void divide_out(const std::vector<double>& poly, double o, double z, std::vector<double>& q) {
  const int k = static_cast<int>(poly.size()) - 1;
  q.assign(static_cast<std::size_t>(k), 0.0);
  if (o == 0.0) {
    for (int t = 0; t < k; ++t) q[static_cast<std::size_t>(t)] = poly[static_cast<std::size_t>(t)] / z;
    return;
  }
  q[static_cast<std::size_t>(k - 1)] = poly[static_cast<std::size_t>(k)] / o;
  for (int t = k - 2; t >= 0; --t)
    q[static_cast<std::size_t>(t)] =
        (poly[static_cast<std::size_t>(t + 1)] - z * q[static_cast<std::size_t>(t + 1)]) / o;
}

// Recursive walker for one tree. condition: 0 = unconditional, +1 = the
// condition feature is forced present (row branch), -1 = forced absent
// (cover-weighted, contributing a scalar fraction).
struct TreeWalker {
  const Tree& tree;
  const FeatureSchema& schema;
  std::span<const double> row;
  int condition = 0;
  int condition_feature = -1;
  double* phi = nullptr;  // length M

  std::vector<PathEntry> path;
  std::vector<double> poly;
  std::vector<double> quotient;

  void run() {
    path.clear();
    poly.assign(1, 1.0);
    recurse(0, 1.0);
  }

  void recurse(int node_id, double condition_fraction) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
    if (node.is_leaf()) {
      const int k = static_cast<int>(path.size());
      if (k == 0) return;  // constant tree contributes only to the base value
      for (int j = 0; j < k; ++j) {
        const PathEntry& pe = path[static_cast<std::size_t>(j)];
        divide_out(poly, pe.one_fraction, pe.zero_fraction, quotient);
        double sum = 0.0;
        for (int t = 0; t < k; ++t) sum += quotient[static_cast<std::size_t>(t)] * weights()(t, k);
        phi[pe.feature] += condition_fraction * (pe.one_fraction - pe.zero_fraction) * sum * node.value;
      }
      return;
    }

    const auto f = static_cast<std::size_t>(node.feature);
    const bool left_is_hot = node.goes_left(row[f], schema.kinds[f]);
    const int hot = left_is_hot ? node.left : node.right;
    const int cold = left_is_hot ? node.right : node.left;
    const double hot_cover = tree.nodes[static_cast<std::size_t>(hot)].cover;
    const double cold_cover = tree.nodes[static_cast<std::size_t>(cold)].cover;
    const double r_hot = hot_cover / node.cover;
    const double r_cold = cold_cover / node.cover;

    if (condition != 0 && node.feature == condition_feature) {
      if (condition > 0) {
        recurse(hot, condition_fraction);
      } else {
        recurse(hot, condition_fraction * r_hot);
        recurse(cold, condition_fraction * r_cold);
      }
      return;
    }

    int existing = -1;
    for (std::size_t j = 0; j < path.size(); ++j)
      if (path[j].feature == node.feature) {
        existing = static_cast<int>(j);
        break;
      }

    if (existing < 0) {
      // hot branch: factor (1*x + r_hot); cold branch: factor (0*x + r_cold)
      descend_new(hot, 1.0, r_hot, node.feature, condition_fraction);
      descend_new(cold, 0.0, r_cold, node.feature, condition_fraction);
    } else {
      const PathEntry saved = path[static_cast<std::size_t>(existing)];
      const std::vector<double> saved_poly = poly;
      descend_update(hot, existing, saved.one_fraction, saved.zero_fraction * r_hot,
                     condition_fraction);
      path[static_cast<std::size_t>(existing)] = saved;
      poly = saved_poly;
      descend_update(cold, existing, 0.0, saved.zero_fraction * r_cold, condition_fraction);
      path[static_cast<std::size_t>(existing)] = saved;
      poly = saved_poly;
    }
  }

  void descend_new(int child, double o, double z, int feature, double condition_fraction) {
    const std::vector<double> saved_poly = poly;
    path.push_back({feature, o, z});
    multiply_in(o, z);
    recurse(child, condition_fraction);
    path.pop_back();
    poly = saved_poly;
  }

  void descend_update(int child, int idx, double o, double z, double condition_fraction) {
    const PathEntry& old = path[static_cast<std::size_t>(idx)];
    divide_out(poly, old.one_fraction, old.zero_fraction, quotient);
    poly = quotient;
    path[static_cast<std::size_t>(idx)] = {old.feature, o, z};
    multiply_in(o, z);
    recurse(child, condition_fraction);
  }

  void multiply_in(double o, double z) {
    poly.push_back(0.0);
    for (std::size_t t = poly.size() - 1; t > 0; --t) poly[t] = z * poly[t] + o * poly[t - 1];
    poly[0] *= z;
  }
};

// Cover-weighted mean of one tree (its contribution to f_x(empty set)).
double tree_mean(const Tree& tree, int node_id = 0) {
  const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
  if (node.is_leaf()) return node.value;
  const double cl = tree.nodes[static_cast<std::size_t>(node.left)].cover;
  const double cr = tree.nodes[static_cast<std::size_t>(node.right)].cover;
  return (cl * tree_mean(tree, node.left) + cr * tree_mean(tree, node.right)) / (cl + cr);
}

void shap_one_class_conditional(const TreeEnsemble& model, std::span<const double> row,
                                int condition, int condition_feature, double* phi_by_class) {
  const int m = model.schema.size();
  for (const Tree& tree : model.trees) {
    TreeWalker walker{tree, model.schema, row, condition, condition_feature,
                      phi_by_class + tree.cls * m, {}, {}, {}};
    walker.run();
  }
}

}  // namespace

ShapValues tree_shap(const TreeEnsemble& model, std::span<const double> row) {
  if (static_cast<int>(row.size()) != model.schema.size())
    throw make_error("SchemaMismatch", "row width does not match model schema");
  model.validate_covers();
  const int m = model.schema.size();
  ShapValues out;
  out.n_features = m;
  out.phi.assign(static_cast<std::size_t>(kNumClasses * m), 0.0);
  out.base = model.base_margin;
  for (const Tree& tree : model.trees) out.base[static_cast<std::size_t>(tree.cls)] += tree_mean(tree);
  shap_one_class_conditional(model, row, 0, -1, out.phi.data());
  return out;
}

namespace {

// f_x(S) for a subset mask: conditioned features follow the row, the rest
// descend cover-weighted.
double eval_masked(const Tree& tree, const FeatureSchema& schema, std::span<const double> row,
                   std::uint32_t mask, int node_id) {
  const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
  if (node.is_leaf()) return node.value;
  const auto f = static_cast<std::size_t>(node.feature);
  if (mask & (1u << node.feature)) {
    return eval_masked(tree, schema, row, mask,
                       node.goes_left(row[f], schema.kinds[f]) ? node.left : node.right);
  }
  const double cl = tree.nodes[static_cast<std::size_t>(node.left)].cover;
  const double cr = tree.nodes[static_cast<std::size_t>(node.right)].cover;
  return (cl * eval_masked(tree, schema, row, mask, node.left) +
          cr * eval_masked(tree, schema, row, mask, node.right)) /
         (cl + cr);
}

std::vector<std::array<double, kNumClasses>> all_subset_values(const TreeEnsemble& model,
                                                               std::span<const double> row) {
  const int m = model.schema.size();
  const std::uint32_t n_masks = 1u << m;
  std::vector<std::array<double, kNumClasses>> f(n_masks, model.base_margin);
  for (std::uint32_t mask = 0; mask < n_masks; ++mask)
    for (const Tree& tree : model.trees)
      f[mask][static_cast<std::size_t>(tree.cls)] += eval_masked(tree, model.schema, row, mask, 0);
  return f;
}

double subset_weight(int s, int m) {  // |S|! (M-|S|-1)! / M!
  return weights()(s, m);
}

}  // namespace

ShapValues brute_force_shap(const TreeEnsemble& model, std::span<const double> row) {
  const int m = model.schema.size();
  if (m > 12) throw make_error("TooManyFeatures", "brute force limited to 12 features");
  if (static_cast<int>(row.size()) != m)
    throw make_error("SchemaMismatch", "row width does not match model schema");
  model.validate_covers();

  const auto f = all_subset_values(model, row);
  ShapValues out;
  out.n_features = m;
  out.phi.assign(static_cast<std::size_t>(kNumClasses * m), 0.0);
  out.base = f[0];

  for (int l = 0; l < m; ++l) {
    const std::uint32_t bit = 1u << l;
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      if (mask & bit) continue;
      const double w = subset_weight(std::popcount(mask), m);
      for (int c = 0; c < kNumClasses; ++c)
        out.phi[static_cast<std::size_t>(c * m + l)] +=
            w * (f[mask | bit][static_cast<std::size_t>(c)] - f[mask][static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

ShapInteractions shap_interactions(const TreeEnsemble& model, std::span<const double> row) {
  const int m = model.schema.size();
  if (static_cast<int>(row.size()) != m)
    throw make_error("SchemaMismatch", "row width does not match model schema");
  model.validate_covers();

  const ShapValues phi = tree_shap(model, row);

  ShapInteractions out;
  out.n_features = m;
  out.values.assign(static_cast<std::size_t>(kNumClasses * m * m), 0.0);

  std::vector<double> present(static_cast<std::size_t>(kNumClasses * m));
  std::vector<double> absent(static_cast<std::size_t>(kNumClasses * m));
  for (int k = 0; k < m; ++k) {
    std::fill(present.begin(), present.end(), 0.0);
    std::fill(absent.begin(), absent.end(), 0.0);
    shap_one_class_conditional(model, row, +1, k, present.data());
    shap_one_class_conditional(model, row, -1, k, absent.data());
    for (int c = 0; c < kNumClasses; ++c)
      for (int l = 0; l < m; ++l) {
        if (l == k) continue;
        out.values[static_cast<std::size_t>((c * m + l) * m + k)] =
            0.5 * (present[static_cast<std::size_t>(c * m + l)] -
                   absent[static_cast<std::size_t>(c * m + l)]);
      }
  }
  // Symmetrize off-diagonals, then set diagonals so each row sums to phi.
  for (int c = 0; c < kNumClasses; ++c) {
    for (int a = 0; a < m; ++a)
      for (int b = a + 1; b < m; ++b) {
        const auto ab = static_cast<std::size_t>((c * m + a) * m + b);
        const auto ba = static_cast<std::size_t>((c * m + b) * m + a);
        const double v = 0.5 * (out.values[ab] + out.values[ba]);
        out.values[ab] = v;
        out.values[ba] = v;
      }
    for (int a = 0; a < m; ++a) {
      double off = 0.0;
      for (int b = 0; b < m; ++b)
        if (b != a) off += out.values[static_cast<std::size_t>((c * m + a) * m + b)];
      out.values[static_cast<std::size_t>((c * m + a) * m + a)] = phi.at(c, a) - off;
    }
  }
  return out;
}

ShapInteractions brute_force_interactions(const TreeEnsemble& model, std::span<const double> row) {
  const int m = model.schema.size();
  if (m > 8) throw make_error("TooManyFeatures", "interaction oracle limited to 8 features");
  model.validate_covers();

  const auto f = all_subset_values(model, row);
  const ShapValues phi = brute_force_shap(model, row);

  ShapInteractions out;
  out.n_features = m;
  out.values.assign(static_cast<std::size_t>(kNumClasses * m * m), 0.0);

  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) {
      const std::uint32_t bit_a = 1u << a;
      const std::uint32_t bit_b = 1u << b;
      std::array<double, kNumClasses> acc{0, 0, 0};
      for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
        if (mask & (bit_a | bit_b)) continue;
        // |S|! (M-|S|-2)! / (2 (M-1)!)
        const int s = std::popcount(mask);
        const double w = 0.5 * weights()(s, m - 1);
        for (int c = 0; c < kNumClasses; ++c) {
          const double delta = f[mask | bit_a | bit_b][static_cast<std::size_t>(c)] -
                               f[mask | bit_a][static_cast<std::size_t>(c)] -
                               f[mask | bit_b][static_cast<std::size_t>(c)] +
                               f[mask][static_cast<std::size_t>(c)];
          acc[static_cast<std::size_t>(c)] += w * delta;
        }
      }
      for (int c = 0; c < kNumClasses; ++c) {
        out.values[static_cast<std::size_t>((c * m + a) * m + b)] = acc[static_cast<std::size_t>(c)];
        out.values[static_cast<std::size_t>((c * m + b) * m + a)] = acc[static_cast<std::size_t>(c)];
      }
    }
  }
  for (int c = 0; c < kNumClasses; ++c)
    for (int a = 0; a < m; ++a) {
      double off = 0.0;
      for (int b = 0; b < m; ++b)
        if (b != a) off += out.values[static_cast<std::size_t>((c * m + a) * m + b)];
      out.values[static_cast<std::size_t>((c * m + a) * m + a)] = phi.at(c, a) - off;
    }
  return out;
}

ShapMatrix compute_shap_matrix(const TreeEnsemble& model, const FeatureTable& data, int threads) {
  if (!(data.schema == model.schema)) throw make_error("SchemaMismatch", "data schema differs from model");
  model.validate_covers();
  const int m = model.schema.size();
  const std::size_t n = data.n_rows();

  ShapMatrix out;
  out.feature_names = model.schema.names;
  out.n_rows = n;
  out.n_features = m;
  out.values.assign(n * kNumClasses * static_cast<std::size_t>(m), 0.0);
  out.base = model.base_margin;
  for (const Tree& tree : model.trees)
    out.base[static_cast<std::size_t>(tree.cls)] += tree_mean(tree);

  parallel_for(n, threads, [&](std::size_t i) {
    double* phi = out.values.data() + i * kNumClasses * static_cast<std::size_t>(m);
    shap_one_class_conditional(model, data.row(i), 0, -1, phi);
  });
  return out;
}

InteractionSummary compute_interaction_summary(const TreeEnsemble& model, const FeatureTable& data,
                                               const std::vector<int>& features, int threads) {
  model.validate_covers();
  const int m = model.schema.size();
  const std::size_t n = data.n_rows();
  InteractionSummary out;
  out.feature_names = model.schema.names;
  out.n_features = m;
  out.mean_abs.assign(static_cast<std::size_t>(m * m), 0.0);
  if (n == 0 || features.size() < 2) return out;

  // Trees that never split on a feature contribute identical present/absent
  // attributions; skip them per conditioning feature.
  std::vector<std::vector<char>> tree_uses(model.trees.size(), std::vector<char>(static_cast<std::size_t>(m), 0));
  for (std::size_t t = 0; t < model.trees.size(); ++t)
    for (const auto& nd : model.trees[t].nodes)
      if (!nd.is_leaf()) tree_uses[t][static_cast<std::size_t>(nd.feature)] = 1;

  std::vector<std::vector<double>> per_row(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto row = data.row(i);
    std::vector<double> raw(static_cast<std::size_t>(kNumClasses * m * m), 0.0);
    std::vector<double> present(static_cast<std::size_t>(kNumClasses * m));
    std::vector<double> absent(static_cast<std::size_t>(kNumClasses * m));
    for (int k : features) {
      std::fill(present.begin(), present.end(), 0.0);
      std::fill(absent.begin(), absent.end(), 0.0);
      for (std::size_t t = 0; t < model.trees.size(); ++t) {
        if (!tree_uses[t][static_cast<std::size_t>(k)]) continue;
        const Tree& tree = model.trees[t];
        TreeWalker wp{tree, model.schema, row, +1, k, present.data() + tree.cls * m, {}, {}, {}};
        wp.run();
        TreeWalker wa{tree, model.schema, row, -1, k, absent.data() + tree.cls * m, {}, {}, {}};
        wa.run();
      }
      for (int c = 0; c < kNumClasses; ++c)
        for (int l : features) {
          if (l == k) continue;
          raw[static_cast<std::size_t>((c * m + l) * m + k)] =
              0.5 * (present[static_cast<std::size_t>(c * m + l)] -
                     absent[static_cast<std::size_t>(c * m + l)]);
        }
    }
    std::vector<double> acc(static_cast<std::size_t>(m * m), 0.0);
    for (int c = 0; c < kNumClasses; ++c)
      for (std::size_t ai = 0; ai < features.size(); ++ai)
        for (std::size_t bi = ai + 1; bi < features.size(); ++bi) {
          const int a = features[ai];
          const int b = features[bi];
          const double v = 0.5 * (raw[static_cast<std::size_t>((c * m + a) * m + b)] +
                                  raw[static_cast<std::size_t>((c * m + b) * m + a)]);
          acc[static_cast<std::size_t>(a * m + b)] += std::abs(v);
        }
    per_row[i] = std::move(acc);
  });

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < out.mean_abs.size(); ++e) out.mean_abs[e] += per_row[i][e];
  const double denom = static_cast<double>(n) * kNumClasses;
  for (std::size_t a = 0; a < static_cast<std::size_t>(m); ++a)
    for (std::size_t b = a + 1; b < static_cast<std::size_t>(m); ++b) {
      const double v = out.mean_abs[a * static_cast<std::size_t>(m) + b] / denom;
      out.mean_abs[a * static_cast<std::size_t>(m) + b] = v;
      out.mean_abs[b * static_cast<std::size_t>(m) + a] = v;
    }
  return out;
}

std::vector<ImportanceEntry> global_importance(const ShapMatrix& matrix, int cls) {
  if (matrix.n_rows == 0) throw make_error("EmptyMatrix", "no rows to rank");
  const int m = matrix.n_features;
  std::vector<ImportanceEntry> out(static_cast<std::size_t>(m));
  for (int f = 0; f < m; ++f) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < matrix.n_rows; ++i) {
      if (cls < 0) {
        for (int c = 0; c < kNumClasses; ++c) {
          acc += std::abs(matrix.at(i, c, f));
          ++count;
        }
      } else {
        acc += std::abs(matrix.at(i, cls, f));
        ++count;
      }
    }
    out[static_cast<std::size_t>(f)] = {matrix.feature_names[static_cast<std::size_t>(f)],
                                        acc / static_cast<double>(count)};
  }
  std::stable_sort(out.begin(), out.end(), [](const ImportanceEntry& a, const ImportanceEntry& b) {
    if (a.mean_abs_shap != b.mean_abs_shap) return a.mean_abs_shap > b.mean_abs_shap;
    return a.feature < b.feature;
  });
  return out;
}

std::vector<RankedPair> rank_interactions(const InteractionSummary& summary,
                                          const std::vector<ImportanceEntry>& importance,
                                          int top_features, int top_pairs) {
  std::vector<int> keep;
  for (const auto& e : importance) {
    if (static_cast<int>(keep.size()) >= top_features) break;
    for (int f = 0; f < summary.n_features; ++f)
      if (summary.feature_names[static_cast<std::size_t>(f)] == e.feature) {
        keep.push_back(f);
        break;
      }
  }
  std::vector<RankedPair> pairs;
  for (std::size_t ai = 0; ai < keep.size(); ++ai)
    for (std::size_t bi = ai + 1; bi < keep.size(); ++bi) {
      const int a = keep[ai];
      const int b = keep[bi];
      std::string na = summary.feature_names[static_cast<std::size_t>(a)];
      std::string nb = summary.feature_names[static_cast<std::size_t>(b)];
      if (nb < na) std::swap(na, nb);
      pairs.push_back({na, nb, summary.at(a, b)});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const RankedPair& x, const RankedPair& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.feature_a != y.feature_a) return x.feature_a < y.feature_a;
    return x.feature_b < y.feature_b;
  });
  if (top_pairs > 0 && static_cast<int>(pairs.size()) > top_pairs)
    pairs.resize(static_cast<std::size_t>(top_pairs));
  return pairs;
}

std::vector<DependenceRow> dependence_table(const ShapMatrix& matrix, const FeatureTable& data,
                                            const std::string& feature,
                                            const std::string& color_feature) {
  const int f = data.schema.index_of(feature);
  const int cf = data.schema.index_of(color_feature);
  if (f < 0) throw make_error("UnknownFeature", feature);
  if (cf < 0) throw make_error("UnknownFeature", color_feature);
  std::vector<DependenceRow> out;
  out.reserve(matrix.n_rows * kNumClasses);
  for (std::size_t i = 0; i < matrix.n_rows; ++i) {
    const auto row = data.row(i);
    for (int c = 0; c < kNumClasses; ++c)
      out.push_back({row[static_cast<std::size_t>(f)], matrix.at(i, c, f),
                     row[static_cast<std::size_t>(cf)], c});
  }
  return out;
}

}  // namespace fleetchurn
