#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/dataset.hpp"
#include "fleetchurn/types.hpp"

namespace fleetchurn {

// One vehicle row as it appears in the normalized input, before key
// derivation. String fields are kept verbatim; normalization happens in
// derive_vehicle_key.
struct RawVehicleRecord {
  std::string household_id;
  int wave = 0;
  std::string head_person_id;
  int model_year = 0;
  std::string manufacturer;
  std::string make;
  std::string body_type;
  std::string ownership;
  int yrs_in_fu = 0;
};

VehicleKey derive_vehicle_key(const RawVehicleRecord& raw);

// Within-household-wave duplicate key handling. Drop removes the duplicate
// rows from labeling (their key still counts for presence/absence); Suffix
// disambiguates by input order; Error throws DuplicateKeyUnresolved.
enum class DuplicatePolicy { Drop, Suffix, Error };

struct LabelStats {
  std::size_t n_records = 0;
  std::size_t n_censored = 0;
  std::size_t n_dropped_duplicates = 0;
  std::size_t n_duplicate_waves = 0;
};

// Assigns next-wave transaction outcomes. A vehicle present at t and t+1 is
// Kept; removed with any concurrent acquisition it is Replaced; removed with
// no acquisition it is Disposed; rows in a household's final observed wave are
// Censored. Output is ordered by (household_id, wave, key) regardless of
// input order.
std::vector<VehicleWaveRecord> label_transactions(std::vector<VehicleWaveRecord> records,
                                                  DuplicatePolicy policy = DuplicatePolicy::Drop,
                                                  LabelStats* stats = nullptr);

// Wave-to-wave deltas and life events for one household. `wave_step` is the
// survey periodicity in years.
ChangeVars derive_change_variables(const HouseholdWaveStatus& now, const HouseholdWaveStatus& next,
                                   int wave_step = 2);

struct PanelLoadStats {
  std::size_t n_vehicle_rows = 0;
  std::size_t n_household_rows = 0;
  std::size_t n_missing_dropped = 0;  // listwise-deleted rows
};

struct PanelData {
  std::vector<VehicleWaveRecord> vehicles;  // unlabeled
  std::vector<HouseholdWaveStatus> statuses;
  PanelLoadStats stats;
};

// Reads the two normalized input files. `mapping` (optional JSON/TOML config)
// renames columns: {"vehicles": {"model_year": "my_col"}, "households": {...}}.
PanelData load_panel(const std::filesystem::path& vehicles_csv,
                     const std::filesystem::path& households_csv,
                     const nlohmann::json* mapping = nullptr);

// Joins labeled vehicle rows with household status and change variables into
// the modeling table. Censored rows are excluded; rows whose household status
// at t or t+1 is missing are listwise-deleted and counted.
Dataset build_model_dataset(const std::vector<VehicleWaveRecord>& labeled,
                            const std::vector<HouseholdWaveStatus>& statuses, int wave_step = 2,
                            std::size_t* n_dropped = nullptr);

// Fixed feature column order of the modeling table.
const std::vector<std::string>& model_feature_names();

nlohmann::json summarize_panel(const Dataset& model_data, const LabelStats& label_stats,
                               std::size_t n_missing_dropped);

}  // namespace fleetchurn
