#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fleetchurn/dataset.hpp"
#include "fleetchurn/types.hpp"

namespace fleetchurn {

using Alt2 = std::array<double, 2>;  // {disposed, replaced}

// Named utility coefficients of the data-generating process. Defaults mirror
// the published estimates; yrs_in_fu_decay adds a smooth exp(-yrs/3) component
// that no binned-and-linear specification can represent exactly.
struct DgpCoefficients {
  Alt2 constant{};
  Alt2 n_veh{};
  Alt2 vintage_2_4{}, vintage_5_10{}, vintage_ge_11{};
  Alt2 yrs_in_fu{};
  Alt2 owned{};
  Alt2 leased_x_v24{};
  Alt2 body_pickup{}, body_utility{}, body_van{};
  Alt2 spouse{};
  Alt2 inc_lt25{}, inc_25_50{}, inc_75_150{}, inc_ge150{};
  Alt2 race_white{};
  Alt2 edu_hs{}, edu_some_college{}, edu_college{}, edu_post_grad{};
  Alt2 n_drivers{}, n_emp{};
  Alt2 age_gt60{};
  Alt2 n_kids{};
  Alt2 kid4_age_lt27{}, kid4_age_27_35{}, kid4_age_gt35{};
  Alt2 kid511_age_lt27{}, kid511_age_27_35{}, kid511_age_gt35{};
  Alt2 kid_12_15{};
  Alt2 house_tenure{};
  Alt2 ch_marriage{};
  Alt2 ch_income_lt25{}, ch_income_25_50{}, ch_income_50_75{}, ch_income_75_150{},
      ch_income_ge150{};
  Alt2 ch_edu{};
  Alt2 birth_age_lt27{}, birth_age_27_35{}, birth_age_gt35{};
  Alt2 kid_moveout{};
  Alt2 ch_n_emp{}, ch_n_driver{};
  Alt2 moved{};
  Alt2 yrs_in_fu_decay{};

  static DgpCoefficients table_one_vehicle();
  static DgpCoefficients table_multi_vehicle();

  nlohmann::json to_json() const;
  static DgpCoefficients from_json(const nlohmann::json& j);
};

struct SynthMarginals {
  std::array<double, 3> fleet_shares{0.475, 0.07, 0.455};  // 1, 2, 3 vehicles
  double vintage_log_mean = 1.95;
  double vintage_log_sd = 0.75;
  double owned_share_initial = 0.95;
  double leased_share_new = 0.12;
  std::array<double, 4> body_shares{0.54, 0.15, 0.24, 0.07};
  std::array<double, 5> income_shares{0.11, 0.21, 0.20, 0.34, 0.14};
  double income_ar_rho = 0.7;
  double income_noise_sd = 12.0;
  std::array<double, 5> edu_shares{0.05, 0.26, 0.29, 0.21, 0.19};
  std::array<double, 4> race_shares{0.08, 0.64, 0.16, 0.12};  // asian, white, black, hispanic
  double spouse_share = 0.65;
  double tenure_share = 0.65;
  double house_share = 0.84;
  double hh_age_mean = 42.0;
  double hh_age_sd = 11.0;
  double moved_rate = 0.44;
  double retire_rate_young = 0.02, retire_rate_old = 0.15;
  double death_rate = 0.01;
  double birth_rate_lt30 = 0.28, birth_rate_30_40 = 0.15, birth_rate_gt40 = 0.01;
  double couple_rate = 0.06, decouple_rate = 0.03;
  double edu_increase_rate = 0.05;
  double lease_buyout_rate = 0.5;  // leased vehicle kept -> converted to owned
  double fleet_growth_rate = 0.35;
};

struct SynthConfig {
  std::size_t n_households = 2000;
  int n_waves = 5;
  int first_wave = 2003;
  int wave_step = 2;
  std::uint64_t seed = 1;
  SynthMarginals marginals;
  DgpCoefficients dgp_one_vehicle = DgpCoefficients::table_one_vehicle();
  DgpCoefficients dgp_multi_vehicle = DgpCoefficients::table_multi_vehicle();
  bool use_segments = true;  // false: multi-vehicle table applies everywhere
  double cluster_effect_sd = 0.0;

  void validate() const;  // throws InvalidConfig
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// One covariate row as the DGP sees it.
struct DgpRow {
  int vintage = 0;
  int yrs_in_fu = 0;
  bool owned = true;
  BodyType body = BodyType::Car;
  int n_veh = 1;
  int hh_age = 40;
  int n_drivers = 1;
  int n_kids = 0;
  bool kid_4 = false, kid_5_11 = false, kid_12_15 = false;
  int n_emp = 1;
  IncomeBin income_bin = IncomeBin::B50_75;
  int edu = 0;
  bool spouse = false;
  bool house_tenure = false;
  bool race_white = false;
  ChangeVars ch;
};

double dgp_utility(const DgpCoefficients& c, const DgpRow& row, int alt);

// Softmax over {U_disposed, 0 (kept), U_replaced}; class order of the result
// is (disposed, kept, replaced). Pure function of the covariates (household
// random effects excluded).
std::array<double, 3> true_probabilities(const SynthConfig& config, const DgpRow& row);

struct SynthVehicleRow {
  VehicleWaveRecord rec;  // outcome = true outcome drawn by the DGP
  std::array<double, 3> true_probs{0, 0, 0};  // conditional on the household effect
  double u_draw = 0.0;
};

struct SynthOutput {
  std::vector<SynthVehicleRow> vehicles;
  std::vector<HouseholdWaveStatus> statuses;
};

SynthOutput generate_panel(const SynthConfig& config, int threads = 1);

void write_vehicles_csv(const SynthOutput& out, const std::filesystem::path& path);
void write_households_csv(const SynthOutput& out, const std::filesystem::path& path);
void write_truth_jsonl(const SynthOutput& out, const std::filesystem::path& path);

// Modeling table labeled with the DGP's own outcomes (bypasses the labeler).
Dataset truth_dataset(const SynthOutput& out, int wave_step = 2);

}  // namespace fleetchurn
