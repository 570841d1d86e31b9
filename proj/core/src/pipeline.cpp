#include "fleetchurn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fleetchurn/csv.hpp"
#include "fleetchurn/rng.hpp"
#include "fleetchurn/error.hpp"
#include "fleetchurn/eval.hpp"
#include "fleetchurn/features.hpp"
#include "fleetchurn/log.hpp"
#include "fleetchurn/manifest.hpp"
#include "fleetchurn/panel.hpp"
#include "fleetchurn/shap.hpp"
#include "fleetchurn/specgen.hpp"
#include "fleetchurn/synth.hpp"
#include "fleetchurn/trees.hpp"

namespace fleetchurn {

namespace {

using nlohmann::json;

json section(const json* cfg, const char* name) {
  if (cfg && cfg->contains(name)) return (*cfg)[name];
  return json::object();
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw make_error("IoError", "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw make_error("IoError", "cannot read " + path.string());
  json j;
  in >> j;
  return j;
}

GbmConfig gbm_config_from(const json& s, std::uint64_t seed) {
  GbmConfig c;
  c.n_rounds = s.value("n_rounds", 200);
  c.learning_rate = s.value("learning_rate", 0.05);
  c.max_leaves = s.value("max_leaves", 31);
  c.min_child_cover = s.value("min_child_cover", 20.0);
  c.n_histogram_bins = s.value("n_histogram_bins", 255);
  c.l2 = s.value("l2", 1.0);
  c.cat_mode = s.value("cat_mode", "target_statistic") == "one_hot" ? CatMode::OneHot
                                                                    : CatMode::TargetStatistic;
  c.early_stop_rounds = s.value("early_stop_rounds", 50);
  c.seed = derive_seed(seed, "gbm");
  return c;
}

std::size_t holdout_households(const json* cfg) {
  return section(cfg, "holdout").value("n_households", std::size_t{0});
}

Manifest start_manifest(const StageContext& ctx, const std::string& stage) {
  Manifest m;
  m.stage = stage;
  m.seed = ctx.seed;
  m.config_hash = sha256_hex(ctx.config ? ctx.config->dump() : "{}");
  return m;
}

}  // namespace

std::vector<std::size_t> train_row_indices(const Dataset& data, std::size_t n_holdout,
                                           std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (n_holdout == 0) {
    idx.resize(data.n_rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
  const HoldoutSplit split = holdout_by_household(data.household_id, n_holdout, seed);
  const std::set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  for (std::size_t i = 0; i < data.n_rows(); ++i)
    if (!test.count(data.household_id[i])) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> test_row_indices(const Dataset& data, std::size_t n_holdout,
                                          std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (n_holdout == 0) return idx;
  const HoldoutSplit split = holdout_by_household(data.household_id, n_holdout, seed);
  const std::set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  for (std::size_t i = 0; i < data.n_rows(); ++i)
    if (test.count(data.household_id[i])) idx.push_back(i);
  return idx;
}

void run_synth_stage(const StageContext& ctx) {
  std::filesystem::create_directories(ctx.out_dir);
  SynthConfig config = SynthConfig::from_json(section(ctx.config, "synth"));
  config.seed = derive_seed(ctx.seed, "synth");
  SynthOutput out = generate_panel(config, ctx.threads);

  Manifest m = start_manifest(ctx, "synth");
  write_vehicles_csv(out, ctx.out_dir / "vehicles.csv");
  write_households_csv(out, ctx.out_dir / "households.csv");
  write_truth_jsonl(out, ctx.out_dir / "truth.jsonl");
  m.add_output(ctx.out_dir / "vehicles.csv");
  m.add_output(ctx.out_dir / "households.csv");
  m.add_output(ctx.out_dir / "truth.jsonl");
  m.write(ctx.out_dir);
}

void run_label_stage(const StageContext& ctx, const std::filesystem::path& vehicles_csv,
                     const std::filesystem::path& households_csv) {
  std::filesystem::create_directories(ctx.out_dir);
  const json label_cfg = section(ctx.config, "label");
  json mapping;
  const json* mapping_ptr = nullptr;
  if (label_cfg.contains("mapping")) {
    mapping = label_cfg["mapping"];
    mapping_ptr = &mapping;
  }
  DuplicatePolicy policy = DuplicatePolicy::Drop;
  const std::string pol = label_cfg.value("duplicate_policy", "drop");
  if (pol == "suffix") policy = DuplicatePolicy::Suffix;
  if (pol == "error") policy = DuplicatePolicy::Error;

  PanelData panel = load_panel(vehicles_csv, households_csv, mapping_ptr);
  LabelStats stats;
  auto labeled = label_transactions(std::move(panel.vehicles), policy, &stats);
  std::size_t n_dropped = 0;
  Dataset data = build_model_dataset(labeled, panel.statuses,
                                     label_cfg.value("wave_step", 2), &n_dropped);

  Manifest m = start_manifest(ctx, "label");
  m.add_input(vehicles_csv);
  m.add_input(households_csv);
  data.write_csv(ctx.out_dir / "labeled.csv");
  write_json(ctx.out_dir / "summary.json",
             summarize_panel(data, stats, panel.stats.n_missing_dropped + n_dropped));
  m.add_output(ctx.out_dir / "labeled.csv");
  m.add_output(ctx.out_dir / "summary.json");
  m.write(ctx.out_dir);
}

void run_train_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv) {
  std::filesystem::create_directories(ctx.out_dir);
  Dataset data = Dataset::read_csv(labeled_csv);
  data.sort_by_provenance();
  const auto train_idx = train_row_indices(data, holdout_households(ctx.config), ctx.seed);
  Dataset train_data = data.select_rows(train_idx);

  const json gbm_cfg = section(ctx.config, "gbm");
  GbmConfig config = gbm_config_from(gbm_cfg, ctx.seed);

  FeatureTable full = FeatureTable::from_dataset(train_data);
  TreeEnsemble model;
  if (config.early_stop_rounds > 0) {
    // Carve a household-grouped validation slice out of the training part.
    const double frac = gbm_cfg.value("validation_fraction", 0.1);
    std::set<std::string> households(train_data.household_id.begin(),
                                     train_data.household_id.end());
    const auto n_valid = static_cast<std::size_t>(static_cast<double>(households.size()) * frac);
    if (n_valid > 0 && n_valid < households.size()) {
      const HoldoutSplit split =
          holdout_by_household(train_data.household_id, n_valid, derive_seed(ctx.seed, "gbm_valid"));
      const std::set<std::string> vset(split.test_ids.begin(), split.test_ids.end());
      std::vector<std::size_t> fit_idx, val_idx;
      for (std::size_t i = 0; i < train_data.n_rows(); ++i)
        (vset.count(train_data.household_id[i]) ? val_idx : fit_idx).push_back(i);
      const FeatureTable fit_part = full.select_rows(fit_idx);
      const FeatureTable val_part = full.select_rows(val_idx);
      model = train_gbm(fit_part, config, &val_part);
    } else {
      model = train_gbm(full, config);
    }
  } else {
    model = train_gbm(full, config);
  }

  Manifest m = start_manifest(ctx, "train");
  m.add_input(labeled_csv);
  write_json(ctx.out_dir / "model.json", model.to_json());
  m.add_output(ctx.out_dir / "model.json");
  m.write(ctx.out_dir);
}

void run_explain_stage(const StageContext& ctx, const std::filesystem::path& model_json,
                       const std::filesystem::path& labeled_csv) {
  std::filesystem::create_directories(ctx.out_dir);
  const json cfg = section(ctx.config, "explain");
  TreeEnsemble model = TreeEnsemble::from_json(read_json(model_json));
  Dataset data = Dataset::read_csv(labeled_csv);
  data.sort_by_provenance();
  const auto train_idx = train_row_indices(data, holdout_households(ctx.config), ctx.seed);
  Dataset train_data = data.select_rows(train_idx);

  // Deterministic row subsample for attribution artifacts.
  const auto sample_cap = cfg.value("shap_sample", std::size_t{4000});
  Dataset shap_data = train_data;
  if (sample_cap > 0 && shap_data.n_rows() > sample_cap) {
    std::vector<std::size_t> idx(train_data.n_rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(ctx.seed, "shap_sample"));
    rng.shuffle(idx);
    idx.resize(sample_cap);
    std::sort(idx.begin(), idx.end());
    shap_data = train_data.select_rows(idx);
  }
  FeatureTable table = FeatureTable::from_dataset(shap_data);
  ShapMatrix matrix = compute_shap_matrix(model, table, ctx.threads);

  Manifest m = start_manifest(ctx, "explain");
  m.add_input(model_json);
  m.add_input(labeled_csv);

  {  // long-format attribution export
    csv::Table t;
    t.header = {"household_id", "wave", "vehicle_key", "class", "feature", "value"};
    static const char* cls_names[3] = {"disposed", "kept", "replaced"};
    for (std::size_t i = 0; i < matrix.n_rows; ++i)
      for (int c = 0; c < kNumClasses; ++c)
        for (int f = 0; f < matrix.n_features; ++f)
          t.rows.push_back({shap_data.household_id[i], std::to_string(shap_data.wave[i]),
                            shap_data.vehicle_key[i], cls_names[c],
                            matrix.feature_names[static_cast<std::size_t>(f)],
                            csv::format_double(matrix.at(i, c, f))});
    csv::write_file(ctx.out_dir / "shap.csv", t);
    m.add_output(ctx.out_dir / "shap.csv");
  }

  const auto importance = global_importance(matrix, -1);
  {
    csv::Table t;
    t.header = {"rank", "feature", "mean_abs_shap"};
    for (std::size_t r = 0; r < importance.size(); ++r)
      t.rows.push_back({std::to_string(r + 1), importance[r].feature,
                        csv::format_double(importance[r].mean_abs_shap)});
    csv::write_file(ctx.out_dir / "importance.csv", t);
    m.add_output(ctx.out_dir / "importance.csv");
  }

  {
    const int top_k1 = cfg.value("top_features", 20);
    const auto interaction_cap = cfg.value("interaction_sample", std::size_t{1000});
    FeatureTable itable = table;
    if (interaction_cap > 0 && shap_data.n_rows() > interaction_cap) {
      std::vector<std::size_t> idx(shap_data.n_rows());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(derive_seed(ctx.seed, "interaction_sample"));
      rng.shuffle(idx);
      idx.resize(interaction_cap);
      std::sort(idx.begin(), idx.end());
      itable = table.select_rows(idx);
    }
    std::vector<int> feat_ids;
    for (const auto& e : importance) {
      if (static_cast<int>(feat_ids.size()) >= top_k1) break;
      feat_ids.push_back(model.schema.index_of(e.feature));
    }
    std::sort(feat_ids.begin(), feat_ids.end());
    const InteractionSummary summary =
        compute_interaction_summary(model, itable, feat_ids, ctx.threads);
    const auto pairs = rank_interactions(summary, importance, top_k1, 0);
    csv::Table t;
    t.header = {"rank", "feature_a", "feature_b", "mean_abs_interaction"};
    for (std::size_t r = 0; r < pairs.size(); ++r)
      t.rows.push_back({std::to_string(r + 1), pairs[r].feature_a, pairs[r].feature_b,
                        csv::format_double(pairs[r].score)});
    csv::write_file(ctx.out_dir / "interactions.csv", t);
    m.add_output(ctx.out_dir / "interactions.csv");
  }

  {
    json deps = cfg.value("dependence", json::array({json::array({"vintage", "ownlease"}),
                                                     json::array({"ch_income", "income_bin"}),
                                                     json::array({"vintage", "n_veh"})}));
    static const char* cls_names[3] = {"disposed", "kept", "replaced"};
    for (const auto& d : deps) {
      const std::string feature = d.at(0).get<std::string>();
      const std::string color = d.at(1).get<std::string>();
      const auto rows = dependence_table(matrix, table, feature, color);
      for (int c = 0; c < kNumClasses; ++c) {
        csv::Table t;
        t.header = {"feature_value", "shap_value", "color_value"};
        for (const auto& r : rows)
          if (r.cls == c)
            t.rows.push_back({csv::format_double(r.feature_value), csv::format_double(r.shap_value),
                              csv::format_double(r.color_value)});
        const auto path = ctx.out_dir / ("dependence_" + feature + "_" + cls_names[c] + ".csv");
        csv::write_file(path, t);
        m.add_output(path);
      }
    }
  }
  m.write(ctx.out_dir);
}

void run_specgen_stage(const StageContext& ctx, const std::filesystem::path& explain_dir,
                       const std::filesystem::path& labeled_csv) {
  std::filesystem::create_directories(ctx.out_dir);
  const json cfg = section(ctx.config, "specgen");
  Dataset data = Dataset::read_csv(labeled_csv);
  data.sort_by_provenance();

  Manifest m = start_manifest(ctx, "specgen");
  m.add_input(labeled_csv);

  SpecProposal proposal;

  const json bin_features = cfg.value("bin_features", json::array({"vintage"}));
  const std::string bin_class = cfg.value("bin_class", "kept");
  for (const auto& bf : bin_features) {
    const std::string feature = bf.get<std::string>();
    const auto dep_path = explain_dir / ("dependence_" + feature + "_" + bin_class + ".csv");
    m.add_input(dep_path);
    csv::Table t = csv::read_file(dep_path);
    const int vc = t.require_column("feature_value");
    const int pc = t.require_column("shap_value");
    std::vector<std::pair<double, double>> points;
    points.reserve(t.rows.size());
    for (const auto& row : t.rows)
      points.emplace_back(std::stod(row[static_cast<std::size_t>(vc)]),
                          std::stod(row[static_cast<std::size_t>(pc)]));
    SegmentationConfig seg_cfg;
    seg_cfg.max_bins = cfg.value("max_bins", 6);
    seg_cfg.penalty_factor = cfg.value("penalty_factor", 1.0);
    proposal.bins.push_back(propose_bins(points, feature, seg_cfg));
  }

  {
    const auto inter_path = explain_dir / "interactions.csv";
    m.add_input(inter_path);
    csv::Table t = csv::read_file(inter_path);
    const int ac = t.require_column("feature_a");
    const int bc = t.require_column("feature_b");
    const int sc = t.require_column("mean_abs_interaction");
    std::vector<RankedPair> ranking;
    for (const auto& row : t.rows)
      ranking.push_back({row[static_cast<std::size_t>(ac)], row[static_cast<std::size_t>(bc)],
                         std::stod(row[static_cast<std::size_t>(sc)])});
    const int top_k = cfg.value("top_pairs", 7);
    proposal.selection = select_interactions(ranking, top_k);
    for (const auto& [a, b] : proposal.selection.pairs)
      for (const auto& r : ranking)
        if ((r.feature_a == a && r.feature_b == b) || (r.feature_a == b && r.feature_b == a)) {
          proposal.interactions.push_back(r);
          break;
        }
  }
  proposal.data_hash = sha256_file(labeled_csv);
  if (std::filesystem::exists(explain_dir / "manifest.json"))
    proposal.model_hash = sha256_file(explain_dir / "manifest.json");

  EmitConfig emit_cfg;
  emit_cfg.apply_manual_template = cfg.value("apply_manual_template", true);
  const FeatureSpec baseline = baseline_spec(data);
  const FeatureSpec improved = emit_mnl_spec(baseline, data, proposal, emit_cfg);

  write_json(ctx.out_dir / "spec.json", improved.to_json());
  write_json(ctx.out_dir / "baseline_spec.json", baseline.to_json());
  write_json(ctx.out_dir / "proposal_report.json", proposal.to_json());
  m.add_output(ctx.out_dir / "spec.json");
  m.add_output(ctx.out_dir / "baseline_spec.json");
  m.add_output(ctx.out_dir / "proposal_report.json");
  m.write(ctx.out_dir);
}

json mnl_fit_to_json(const MnlFit& fit) {
  json j;
  j["names"] = fit.coef.names;
  j["disposed"] = std::vector<double>(fit.coef.disposed.data(),
                                      fit.coef.disposed.data() + fit.coef.disposed.size());
  j["replaced"] = std::vector<double>(fit.coef.replaced.data(),
                                      fit.coef.replaced.data() + fit.coef.replaced.size());
  j["log_likelihood"] = fit.log_likelihood;
  j["converged"] = fit.converged;
  j["separation_warning"] = fit.separation_warning;
  j["n_obs"] = fit.n_obs;
  j["n_clusters"] = fit.n_clusters;
  j["data_hash"] = fit.data_hash;
  const int k = fit.coef.size();
  std::vector<double> se_i, se_c;
  for (int a = 0; a < 2; ++a)
    for (int jj = 0; jj < k; ++jj) {
      se_i.push_back(fit.se_iid(a, jj));
      se_c.push_back(fit.se_cluster(a, jj));
    }
  j["se_iid"] = se_i;
  j["se_cluster"] = se_c;
  return j;
}

MnlFit mnl_fit_from_json(const json& j) {
  MnlFit fit;
  fit.coef.names = j.at("names").get<std::vector<std::string>>();
  const auto d = j.at("disposed").get<std::vector<double>>();
  const auto r = j.at("replaced").get<std::vector<double>>();
  fit.coef.disposed = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
  fit.coef.replaced = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  fit.log_likelihood = j.value("log_likelihood", 0.0);
  fit.converged = j.value("converged", false);
  fit.n_obs = j.value("n_obs", 0);
  fit.n_clusters = j.value("n_clusters", 0);
  fit.data_hash = j.value("data_hash", "");
  return fit;
}

namespace {

struct SegmentedFit {
  std::vector<std::pair<std::string, MnlFit>> segments;  // name -> fit
  json spec_json;
};

SegmentedFit fit_spec_on(const Dataset& train_data, const FeatureSpec& spec) {
  SegmentedFit out;
  out.spec_json = spec.to_json();
  if (spec.segment == Segment::All) {
    DesignMatrix dm = build_design_matrix(train_data, spec);
    out.segments.emplace_back("all", fit_mnl(dm));
  } else {
    for (Segment seg : {Segment::OneVehicle, Segment::MultiVehicle}) {
      const FeatureSpec seg_spec = spec_for_segment(spec, seg);
      DesignMatrix dm = build_design_matrix(train_data, seg_spec);
      out.segments.emplace_back(seg == Segment::OneVehicle ? "one_vehicle" : "multi_vehicle",
                                fit_mnl(dm));
    }
  }
  return out;
}

// Per-row probabilities from a (possibly segmented) MNL fit file.
Eigen::MatrixXd predict_from_fit_json(const json& fit_file, const Dataset& rows) {
  const FeatureSpec spec = FeatureSpec::from_json(fit_file.at("spec"));
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(rows.n_rows()), 3);
  probs.setZero();
  for (const auto& seg_entry : fit_file.at("segments").items()) {
    const std::string& seg_name = seg_entry.key();
    const MnlFit fit = mnl_fit_from_json(seg_entry.value());
    Segment seg = seg_name == "one_vehicle"     ? Segment::OneVehicle
                  : seg_name == "multi_vehicle" ? Segment::MultiVehicle
                                                : Segment::All;
    const FeatureSpec seg_spec = spec_for_segment(spec, seg);
    // Row selection mirrors build_design_matrix's segment filter.
    std::vector<std::size_t> idx;
    if (seg == Segment::All) {
      idx.resize(rows.n_rows());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    } else {
      const auto& nveh = rows.col("n_veh").values;
      for (std::size_t i = 0; i < rows.n_rows(); ++i)
        if ((nveh[i] == 1.0) == (seg == Segment::OneVehicle)) idx.push_back(i);
    }
    if (idx.empty()) continue;
    Dataset sub = rows.select_rows(idx);
    FeatureSpec unsegmented = seg_spec;
    unsegmented.segment = Segment::All;  // rows are pre-filtered
    DesignMatrix dm = build_design_matrix(sub, unsegmented);
    const Eigen::MatrixXd p = predict_mnl(fit, dm);
    // build_design_matrix re-sorts by provenance; map predictions back.
    std::map<std::string, Eigen::Index> where;
    for (std::size_t r = 0; r < dm.n_rows(); ++r)
      where[dm.household_id[r] + "|" + std::to_string(dm.wave[r]) + "|" + dm.vehicle_key[r]] =
          static_cast<Eigen::Index>(r);
    for (std::size_t i : idx) {
      const auto key = rows.household_id[i] + "|" + std::to_string(rows.wave[i]) + "|" +
                       rows.vehicle_key[i];
      probs.row(static_cast<Eigen::Index>(i)) = p.row(where.at(key));
    }
  }
  return probs;
}

}  // namespace

void run_fit_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv,
                   const std::filesystem::path& spec_json) {
  std::filesystem::create_directories(ctx.out_dir);
  Dataset data = Dataset::read_csv(labeled_csv);
  data.sort_by_provenance();
  const auto train_idx = train_row_indices(data, holdout_households(ctx.config), ctx.seed);
  Dataset train_data = data.select_rows(train_idx);

  const FeatureSpec spec = FeatureSpec::from_json(read_json(spec_json));
  SegmentedFit fitted = fit_spec_on(train_data, spec);

  Manifest m = start_manifest(ctx, "fit");
  m.add_input(labeled_csv);
  m.add_input(spec_json);

  json fit_file;
  fit_file["spec"] = fitted.spec_json;
  json segs = json::object();
  csv::Table coef_csv;
  coef_csv.header = {"segment", "alternative", "term",      "estimate",
                     "se_iid",  "se_cluster",  "z",         "p",
                     "stars"};
  for (auto& [seg_name, fit] : fitted.segments) {
    json fj = mnl_fit_to_json(fit);

    // Likelihood-ratio test against the intercept-only restriction.
    {
      Dataset seg_rows = train_data;
      if (seg_name != "all") {
        auto [one, multi] = segment_by_fleet_size(train_data);
        seg_rows = seg_name == "one_vehicle" ? std::move(one) : std::move(multi);
      }
      FeatureSpec null_spec;
      null_spec.segment = Segment::All;
      DesignMatrix null_dm = build_design_matrix(seg_rows, null_spec);
      const MnlFit null_fit = fit_mnl(null_dm);
      const LrTestResult lr = lr_test(fit, null_fit);
      fj["lr_statistic"] = lr.statistic;
      fj["lr_df"] = lr.df;
      fj["lr_p"] = lr.p_value;
    }
    segs[seg_name] = fj;

    static const char* alt_names[2] = {"disposed", "replaced"};
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXd& est = a == 0 ? fit.coef.disposed : fit.coef.replaced;
      for (int jj = 0; jj < fit.coef.size(); ++jj) {
        const double se = fit.se_cluster(a, jj);
        const double z = se > 0 ? est(jj) / se : 0.0;
        const double p = se > 0 ? std::erfc(std::abs(z) / std::sqrt(2.0)) : 1.0;
        coef_csv.rows.push_back({seg_name, alt_names[a],
                                 fit.coef.names[static_cast<std::size_t>(jj)],
                                 csv::format_double(est(jj)), csv::format_double(fit.se_iid(a, jj)),
                                 csv::format_double(se), csv::format_double(z),
                                 csv::format_double(p), significance_stars(p)});
      }
    }
  }
  fit_file["segments"] = segs;

  write_json(ctx.out_dir / "fit.json", fit_file);
  csv::write_file(ctx.out_dir / "coefficients.csv", coef_csv);
  m.add_output(ctx.out_dir / "fit.json");
  m.add_output(ctx.out_dir / "coefficients.csv");

  if (section(ctx.config, "fit").value("lasso", false)) {
    const FeatureSpec flat = spec_for_segment(spec, Segment::All);
    DesignMatrix dm = build_design_matrix(train_data, flat);
    const LassoPath path = fit_lasso_path(dm);
    json lj = json::array();
    for (const auto& step : path.steps) {
      json sj;
      sj["lambda"] = step.lambda;
      sj["active"] = step.active;
      sj["converged"] = step.converged;
      lj.push_back(sj);
    }
    write_json(ctx.out_dir / "lasso_path.json", lj);
    m.add_output(ctx.out_dir / "lasso_path.json");
  }
  m.write(ctx.out_dir);
}

void run_evaluate_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv,
                        const std::vector<std::pair<std::string, std::filesystem::path>>& models) {
  std::filesystem::create_directories(ctx.out_dir);
  Dataset data = Dataset::read_csv(labeled_csv);
  data.sort_by_provenance();
  const std::size_t n_holdout = holdout_households(ctx.config);
  const auto train_idx = train_row_indices(data, n_holdout, ctx.seed);
  const auto test_idx = test_row_indices(data, n_holdout, ctx.seed);

  Manifest m = start_manifest(ctx, "evaluate");
  m.add_input(labeled_csv);

  json metrics = json::object();
  for (const auto& [name, path] : models) {
    m.add_input(path);
    const json model_file = read_json(path);
    auto eval_on = [&](const std::vector<std::size_t>& idx) -> json {
      if (idx.empty()) return json();
      Dataset rows = data.select_rows(idx);
      std::vector<std::array<double, kNumClasses>> probs(rows.n_rows());
      if (model_file.contains("trees")) {
        const TreeEnsemble model = TreeEnsemble::from_json(model_file);
        FeatureTable table = FeatureTable::from_dataset(rows);
        for (std::size_t i = 0; i < rows.n_rows(); ++i) probs[i] = model.predict_proba(table.row(i));
      } else {
        const Eigen::MatrixXd p = predict_from_fit_json(model_file, rows);
        for (std::size_t i = 0; i < rows.n_rows(); ++i)
          probs[i] = {p(static_cast<Eigen::Index>(i), 0), p(static_cast<Eigen::Index>(i), 1),
                      p(static_cast<Eigen::Index>(i), 2)};
      }
      return metric_report(rows.label, probs).to_json();
    };
    json entry;
    entry["in_sample"] = eval_on(train_idx);
    if (!test_idx.empty()) entry["test"] = eval_on(test_idx);
    metrics[name] = entry;
  }
  write_json(ctx.out_dir / "metrics.json", metrics);
  m.add_output(ctx.out_dir / "metrics.json");

  run_report_stage({ctx.out_dir / "metrics.json"}, ctx.out_dir,
                   ctx.config ? ctx.config->value("format", "csv") : "csv");
  m.write(ctx.out_dir);
}

void run_report_stage(const std::vector<std::filesystem::path>& metrics_files,
                      const std::filesystem::path& out_dir, const std::string& format) {
  std::filesystem::create_directories(out_dir);
  static const char* metric_rows[] = {"overall_accuracy", "average_accuracy", "macro_precision",
                                      "sensitivity",      "macro_f1",         "micro",
                                      "cohens_kappa",     "specificity",      "cross_entropy_bits",
                                      "log_loss_nats"};
  json merged = json::object();
  for (const auto& f : metrics_files) {
    const json j = read_json(f);
    for (const auto& [model, entry] : j.items()) merged[model] = entry;
  }
  if (format == "json") {
    write_json(out_dir / "table3.json", merged);
    return;
  }
  csv::Table t;
  t.header = {"metric"};
  std::vector<std::pair<std::string, std::string>> columns;  // (model, split)
  for (const auto& [model, entry] : merged.items())
    for (const auto& [split, rep] : entry.items())
      if (!rep.is_null()) {
        columns.emplace_back(model, split);
        t.header.push_back(model + "_" + split);
      }
  for (const char* mr : metric_rows) {
    std::vector<std::string> row{mr};
    for (const auto& [model, split] : columns)
      row.push_back(csv::format_double(merged[model][split].value(mr, 0.0)));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(out_dir / "table3.csv", t);
}

void run_full_pipeline(const StageContext& ctx) {
  std::filesystem::create_directories(ctx.out_dir);
  StageContext sub = ctx;

  sub.out_dir = ctx.out_dir / "synth";
  run_synth_stage(sub);

  sub.out_dir = ctx.out_dir / "label";
  run_label_stage(sub, ctx.out_dir / "synth" / "vehicles.csv",
                  ctx.out_dir / "synth" / "households.csv");
  const auto labeled = ctx.out_dir / "label" / "labeled.csv";

  sub.out_dir = ctx.out_dir / "train";
  run_train_stage(sub, labeled);

  sub.out_dir = ctx.out_dir / "explain";
  run_explain_stage(sub, ctx.out_dir / "train" / "model.json", labeled);

  sub.out_dir = ctx.out_dir / "specgen";
  run_specgen_stage(sub, ctx.out_dir / "explain", labeled);

  sub.out_dir = ctx.out_dir / "fit_bmnl";
  run_fit_stage(sub, labeled, ctx.out_dir / "specgen" / "baseline_spec.json");

  sub.out_dir = ctx.out_dir / "fit_imnl";
  run_fit_stage(sub, labeled, ctx.out_dir / "specgen" / "spec.json");

  sub.out_dir = ctx.out_dir / "evaluate";
  run_evaluate_stage(sub, labeled,
                     {{"bmnl", ctx.out_dir / "fit_bmnl" / "fit.json"},
                      {"imnl", ctx.out_dir / "fit_imnl" / "fit.json"},
                      {"gbm", ctx.out_dir / "train" / "model.json"}});
}

}  // namespace fleetchurn
