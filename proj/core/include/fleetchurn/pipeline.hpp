#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/dataset.hpp"
#include "fleetchurn/mnl.hpp"

namespace fleetchurn {

// Pipeline stages. Each writes its primary artifacts plus a manifest.json
// into `out_dir` and is deterministic given (inputs, config, seed).

struct StageContext {
  nlohmann::json const* config = nullptr;  // full config tree
  std::uint64_t seed = 0;
  int threads = 1;
  std::filesystem::path out_dir;
};

void run_synth_stage(const StageContext& ctx);

void run_label_stage(const StageContext& ctx, const std::filesystem::path& vehicles_csv,
                     const std::filesystem::path& households_csv);

void run_train_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv);

void run_explain_stage(const StageContext& ctx, const std::filesystem::path& model_json,
                       const std::filesystem::path& labeled_csv);

void run_specgen_stage(const StageContext& ctx, const std::filesystem::path& explain_dir,
                       const std::filesystem::path& labeled_csv);

void run_fit_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv,
                   const std::filesystem::path& spec_json);

void run_evaluate_stage(const StageContext& ctx, const std::filesystem::path& labeled_csv,
                        const std::vector<std::pair<std::string, std::filesystem::path>>& models);

void run_report_stage(const std::vector<std::filesystem::path>& metrics_files,
                      const std::filesystem::path& out_dir, const std::string& format);

// synth -> label -> train -> explain -> specgen -> fit(bMNL, iMNL) -> evaluate.
void run_full_pipeline(const StageContext& ctx);

// Helpers shared by stages and tests.

// Rows whose household is in the training part of the seed-derived holdout
// split; n_holdout = 0 keeps everything.
std::vector<std::size_t> train_row_indices(const Dataset& data, std::size_t n_holdout,
                                           std::uint64_t seed);
std::vector<std::size_t> test_row_indices(const Dataset& data, std::size_t n_holdout,
                                          std::uint64_t seed);

nlohmann::json mnl_fit_to_json(const MnlFit& fit);
MnlFit mnl_fit_from_json(const nlohmann::json& j);

}  // namespace fleetchurn
