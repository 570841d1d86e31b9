#include "fleetchurn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fleetchurn/csv.hpp"
#include "fleetchurn/error.hpp"
#include "fleetchurn/panel.hpp"
#include "fleetchurn/parallel.hpp"
#include "fleetchurn/rng.hpp"

namespace fleetchurn {

DgpCoefficients DgpCoefficients::table_one_vehicle() {
  DgpCoefficients c;
  c.constant = {-1.887, -0.601};
  c.n_veh = {0.0, 0.0};
  c.vintage_2_4 = {0.098, 0.354};
  c.vintage_5_10 = {0.529, 0.725};
  c.vintage_ge_11 = {1.248, 1.416};
  c.yrs_in_fu = {-0.050, -0.060};
  c.owned = {-0.392, -0.408};
  c.leased_x_v24 = {0.702, 0.885};
  c.body_pickup = {-0.386, -0.152};
  c.body_utility = {-0.238, -0.159};
  c.body_van = {-0.055, 0.083};
  c.spouse = {-0.051, 0.019};
  c.inc_lt25 = {0.560, -0.278};
  c.inc_25_50 = {0.257, -0.08};
  c.inc_75_150 = {-0.125, 0.088};
  c.inc_ge150 = {0.406, 0.113};
  c.race_white = {-0.008, -0.016};
  c.edu_hs = {-0.332, -0.043};
  c.edu_some_college = {-0.489, -0.053};
  c.edu_college = {-0.922, -0.271};
  c.edu_post_grad = {-1.081, -0.220};
  c.n_drivers = {0.324, 0.115};
  c.n_emp = {-0.619, 0.015};
  c.age_gt60 = {-0.194, -0.311};
  c.n_kids = {0.058, 0.022};
  c.kid4_age_lt27 = {0.315, 0.455};
  c.kid4_age_27_35 = {-0.253, -0.071};
  c.kid4_age_gt35 = {-0.183, 0.14};
  c.kid511_age_lt27 = {-0.116, 0.207};
  c.kid511_age_27_35 = {-0.089, 0.247};
  c.kid511_age_gt35 = {-0.273, 0.025};
  c.kid_12_15 = {0.022, -0.005};
  c.house_tenure = {-0.434, -0.065};
  c.ch_marriage = {-0.686, -0.117};
  c.ch_income_lt25 = {-0.012, 0.005};
  c.ch_income_25_50 = {-0.010, 0.002};
  c.ch_income_50_75 = {-0.008, 0.001};
  c.ch_income_75_150 = {-0.007, 0.001};
  c.ch_income_ge150 = {0.0001, 0.0003};
  c.ch_edu = {-0.293, 0.065};
  c.birth_age_lt27 = {0.268, 0.349};
  c.birth_age_27_35 = {0.018, 0.179};
  c.birth_age_gt35 = {0.295, -0.251};
  c.kid_moveout = {0.095, 0.351};
  c.ch_n_emp = {-0.619, -0.047};
  c.ch_n_driver = {-0.203, 0.119};
  c.moved = {0.569, 0.337};
  c.yrs_in_fu_decay = {0.6, 0.9};
  return c;
}

DgpCoefficients DgpCoefficients::table_multi_vehicle() {
  DgpCoefficients c;
  c.constant = {-2.894, -0.568};
  c.n_veh = {0.802, -0.070};
  c.vintage_2_4 = {0.538, 0.255};
  c.vintage_5_10 = {1.037, 0.548};
  c.vintage_ge_11 = {1.779, 1.093};
  c.yrs_in_fu = {-0.032, -0.053};
  c.owned = {-0.445, -0.517};
  c.leased_x_v24 = {0.766, 1.260};
  c.body_pickup = {-0.229, -0.242};
  c.body_utility = {-0.141, -0.106};
  c.body_van = {-0.018, 0.106};
  c.spouse = {-0.862, -0.083};
  c.inc_lt25 = {0.341, -0.048};
  c.inc_25_50 = {0.146, -0.133};
  c.inc_75_150 = {-0.118, 0.086};
  c.inc_ge150 = {0.055, 0.210};
  c.race_white = {-0.291, 0.181};
  c.edu_hs = {-0.052, -0.051};
  c.edu_some_college = {-0.174, -0.138};
  c.edu_college = {-0.192, -0.248};
  c.edu_post_grad = {-0.356, -0.302};
  c.n_drivers = {0.019, 0.072};
  c.n_emp = {-0.208, 0.087};
  c.age_gt60 = {-0.043, -0.104};
  c.n_kids = {0.061, 0.066};
  c.kid4_age_lt27 = {-0.103, 0.16};
  c.kid4_age_27_35 = {-0.065, 0.052};
  c.kid4_age_gt35 = {-0.089, -0.07};
  c.kid511_age_lt27 = {0.205, 0.131};
  c.kid511_age_27_35 = {0.034, 0.117};
  c.kid511_age_gt35 = {-0.112, -0.006};
  c.kid_12_15 = {0.108, -0.009};
  c.house_tenure = {-0.265, -0.053};
  c.ch_marriage = {-1.366, -0.098};
  c.ch_income_lt25 = {-0.005, 0.004};
  c.ch_income_25_50 = {-0.005, 0.002};
  c.ch_income_50_75 = {-0.004, 0.002};
  c.ch_income_75_150 = {-0.003, 0.001};
  c.ch_income_ge150 = {0.0001, -0.00001};
  c.ch_edu = {-0.197, 0.006};
  c.birth_age_lt27 = {0.248, 0.323};
  c.birth_age_27_35 = {-0.155, 0.085};
  c.birth_age_gt35 = {0.206, 0.033};
  c.kid_moveout = {0.370, 0.061};
  c.ch_n_emp = {-0.298, 0.029};
  c.ch_n_driver = {-0.324, -0.004};
  c.moved = {0.382, 0.284};
  c.yrs_in_fu_decay = {0.6, 0.9};
  return c;
}

namespace {

struct FieldDef {
  const char* name;
  Alt2 DgpCoefficients::* member;
};

const std::vector<FieldDef>& dgp_fields() {
  static const std::vector<FieldDef> fields = {
      {"constant", &DgpCoefficients::constant},
      {"n_veh", &DgpCoefficients::n_veh},
      {"vintage_2_4", &DgpCoefficients::vintage_2_4},
      {"vintage_5_10", &DgpCoefficients::vintage_5_10},
      {"vintage_ge_11", &DgpCoefficients::vintage_ge_11},
      {"yrs_in_fu", &DgpCoefficients::yrs_in_fu},
      {"owned", &DgpCoefficients::owned},
      {"leased_x_v24", &DgpCoefficients::leased_x_v24},
      {"body_pickup", &DgpCoefficients::body_pickup},
      {"body_utility", &DgpCoefficients::body_utility},
      {"body_van", &DgpCoefficients::body_van},
      {"spouse", &DgpCoefficients::spouse},
      {"inc_lt25", &DgpCoefficients::inc_lt25},
      {"inc_25_50", &DgpCoefficients::inc_25_50},
      {"inc_75_150", &DgpCoefficients::inc_75_150},
      {"inc_ge150", &DgpCoefficients::inc_ge150},
      {"race_white", &DgpCoefficients::race_white},
      {"edu_hs", &DgpCoefficients::edu_hs},
      {"edu_some_college", &DgpCoefficients::edu_some_college},
      {"edu_college", &DgpCoefficients::edu_college},
      {"edu_post_grad", &DgpCoefficients::edu_post_grad},
      {"n_drivers", &DgpCoefficients::n_drivers},
      {"n_emp", &DgpCoefficients::n_emp},
      {"age_gt60", &DgpCoefficients::age_gt60},
      {"n_kids", &DgpCoefficients::n_kids},
      {"kid4_age_lt27", &DgpCoefficients::kid4_age_lt27},
      {"kid4_age_27_35", &DgpCoefficients::kid4_age_27_35},
      {"kid4_age_gt35", &DgpCoefficients::kid4_age_gt35},
      {"kid511_age_lt27", &DgpCoefficients::kid511_age_lt27},
      {"kid511_age_27_35", &DgpCoefficients::kid511_age_27_35},
      {"kid511_age_gt35", &DgpCoefficients::kid511_age_gt35},
      {"kid_12_15", &DgpCoefficients::kid_12_15},
      {"house_tenure", &DgpCoefficients::house_tenure},
      {"ch_marriage", &DgpCoefficients::ch_marriage},
      {"ch_income_lt25", &DgpCoefficients::ch_income_lt25},
      {"ch_income_25_50", &DgpCoefficients::ch_income_25_50},
      {"ch_income_50_75", &DgpCoefficients::ch_income_50_75},
      {"ch_income_75_150", &DgpCoefficients::ch_income_75_150},
      {"ch_income_ge150", &DgpCoefficients::ch_income_ge150},
      {"ch_edu", &DgpCoefficients::ch_edu},
      {"birth_age_lt27", &DgpCoefficients::birth_age_lt27},
      {"birth_age_27_35", &DgpCoefficients::birth_age_27_35},
      {"birth_age_gt35", &DgpCoefficients::birth_age_gt35},
      {"kid_moveout", &DgpCoefficients::kid_moveout},
      {"ch_n_emp", &DgpCoefficients::ch_n_emp},
      {"ch_n_driver", &DgpCoefficients::ch_n_driver},
      {"moved", &DgpCoefficients::moved},
      {"yrs_in_fu_decay", &DgpCoefficients::yrs_in_fu_decay},
  };
  return fields;
}

}  // namespace

nlohmann::json DgpCoefficients::to_json() const {
  nlohmann::json j;
  for (const auto& f : dgp_fields()) j[f.name] = this->*f.member;
  return j;
}

DgpCoefficients DgpCoefficients::from_json(const nlohmann::json& j) {
  DgpCoefficients c;
  for (const auto& f : dgp_fields())
    if (j.contains(f.name)) c.*f.member = j.at(f.name).get<Alt2>();
  return c;
}

void SynthConfig::validate() const {
  auto simplex = [](const auto& shares, const char* what) {
    double sum = 0.0;
    for (double s : shares) {
      if (s < 0.0 || s > 1.0) throw make_error("InvalidConfig", std::string(what) + " share outside [0,1]");
      sum += s;
    }
    if (std::abs(sum - 1.0) > 0.05)
      throw make_error("InvalidConfig", std::string(what) + " shares do not sum to 1");
  };
  simplex(marginals.fleet_shares, "fleet");
  simplex(marginals.body_shares, "body");
  simplex(marginals.income_shares, "income");
  simplex(marginals.edu_shares, "edu");
  simplex(marginals.race_shares, "race");
  if (n_waves < 2) throw make_error("InvalidConfig", "n_waves must be >= 2");
  if (n_households == 0) throw make_error("InvalidConfig", "n_households must be positive");
  if (cluster_effect_sd < 0.0) throw make_error("InvalidConfig", "cluster_effect_sd must be >= 0");
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json j;
  j["n_households"] = n_households;
  j["n_waves"] = n_waves;
  j["first_wave"] = first_wave;
  j["wave_step"] = wave_step;
  j["seed"] = seed;
  j["use_segments"] = use_segments;
  j["cluster_effect_sd"] = cluster_effect_sd;
  nlohmann::json m;
  m["fleet_shares"] = marginals.fleet_shares;
  m["vintage_log_mean"] = marginals.vintage_log_mean;
  m["vintage_log_sd"] = marginals.vintage_log_sd;
  m["owned_share_initial"] = marginals.owned_share_initial;
  m["leased_share_new"] = marginals.leased_share_new;
  m["body_shares"] = marginals.body_shares;
  m["income_shares"] = marginals.income_shares;
  m["income_ar_rho"] = marginals.income_ar_rho;
  m["income_noise_sd"] = marginals.income_noise_sd;
  m["edu_shares"] = marginals.edu_shares;
  m["race_shares"] = marginals.race_shares;
  m["spouse_share"] = marginals.spouse_share;
  m["tenure_share"] = marginals.tenure_share;
  m["house_share"] = marginals.house_share;
  m["hh_age_mean"] = marginals.hh_age_mean;
  m["hh_age_sd"] = marginals.hh_age_sd;
  m["moved_rate"] = marginals.moved_rate;
  m["retire_rate_young"] = marginals.retire_rate_young;
  m["retire_rate_old"] = marginals.retire_rate_old;
  m["death_rate"] = marginals.death_rate;
  m["birth_rate_lt30"] = marginals.birth_rate_lt30;
  m["birth_rate_30_40"] = marginals.birth_rate_30_40;
  m["birth_rate_gt40"] = marginals.birth_rate_gt40;
  m["couple_rate"] = marginals.couple_rate;
  m["decouple_rate"] = marginals.decouple_rate;
  m["edu_increase_rate"] = marginals.edu_increase_rate;
  m["lease_buyout_rate"] = marginals.lease_buyout_rate;
  m["fleet_growth_rate"] = marginals.fleet_growth_rate;
  j["marginals"] = m;
  j["dgp_one_vehicle"] = dgp_one_vehicle.to_json();
  j["dgp_multi_vehicle"] = dgp_multi_vehicle.to_json();
  return j;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.n_households = j.value("n_households", c.n_households);
  c.n_waves = j.value("n_waves", c.n_waves);
  c.first_wave = j.value("first_wave", c.first_wave);
  c.wave_step = j.value("wave_step", c.wave_step);
  c.seed = j.value("seed", c.seed);
  c.use_segments = j.value("use_segments", c.use_segments);
  c.cluster_effect_sd = j.value("cluster_effect_sd", c.cluster_effect_sd);
  if (j.contains("marginals")) {
    const auto& m = j["marginals"];
    SynthMarginals& g = c.marginals;
    if (m.contains("fleet_shares")) g.fleet_shares = m["fleet_shares"].get<std::array<double, 3>>();
    g.vintage_log_mean = m.value("vintage_log_mean", g.vintage_log_mean);
    g.vintage_log_sd = m.value("vintage_log_sd", g.vintage_log_sd);
    g.owned_share_initial = m.value("owned_share_initial", g.owned_share_initial);
    g.leased_share_new = m.value("leased_share_new", g.leased_share_new);
    if (m.contains("body_shares")) g.body_shares = m["body_shares"].get<std::array<double, 4>>();
    if (m.contains("income_shares")) g.income_shares = m["income_shares"].get<std::array<double, 5>>();
    g.income_ar_rho = m.value("income_ar_rho", g.income_ar_rho);
    g.income_noise_sd = m.value("income_noise_sd", g.income_noise_sd);
    if (m.contains("edu_shares")) g.edu_shares = m["edu_shares"].get<std::array<double, 5>>();
    if (m.contains("race_shares")) g.race_shares = m["race_shares"].get<std::array<double, 4>>();
    g.spouse_share = m.value("spouse_share", g.spouse_share);
    g.tenure_share = m.value("tenure_share", g.tenure_share);
    g.house_share = m.value("house_share", g.house_share);
    g.hh_age_mean = m.value("hh_age_mean", g.hh_age_mean);
    g.hh_age_sd = m.value("hh_age_sd", g.hh_age_sd);
    g.moved_rate = m.value("moved_rate", g.moved_rate);
    g.retire_rate_young = m.value("retire_rate_young", g.retire_rate_young);
    g.retire_rate_old = m.value("retire_rate_old", g.retire_rate_old);
    g.death_rate = m.value("death_rate", g.death_rate);
    g.birth_rate_lt30 = m.value("birth_rate_lt30", g.birth_rate_lt30);
    g.birth_rate_30_40 = m.value("birth_rate_30_40", g.birth_rate_30_40);
    g.birth_rate_gt40 = m.value("birth_rate_gt40", g.birth_rate_gt40);
    g.couple_rate = m.value("couple_rate", g.couple_rate);
    g.decouple_rate = m.value("decouple_rate", g.decouple_rate);
    g.edu_increase_rate = m.value("edu_increase_rate", g.edu_increase_rate);
    g.lease_buyout_rate = m.value("lease_buyout_rate", g.lease_buyout_rate);
    g.fleet_growth_rate = m.value("fleet_growth_rate", g.fleet_growth_rate);
  }
  if (j.contains("dgp_one_vehicle")) c.dgp_one_vehicle = DgpCoefficients::from_json(j["dgp_one_vehicle"]);
  if (j.contains("dgp_multi_vehicle"))
    c.dgp_multi_vehicle = DgpCoefficients::from_json(j["dgp_multi_vehicle"]);
  return c;
}

double dgp_utility(const DgpCoefficients& c, const DgpRow& row, int alt) {
  const auto a = static_cast<std::size_t>(alt);
  double u = c.constant[a];
  u += c.n_veh[a] * row.n_veh;
  const bool v24 = row.vintage >= 2 && row.vintage <= 4;
  if (v24)
    u += c.vintage_2_4[a];
  else if (row.vintage >= 5 && row.vintage <= 10)
    u += c.vintage_5_10[a];
  else if (row.vintage >= 11)
    u += c.vintage_ge_11[a];
  u += c.yrs_in_fu[a] * row.yrs_in_fu;
  if (row.owned) u += c.owned[a];
  if (!row.owned && v24) u += c.leased_x_v24[a];
  switch (row.body) {
    case BodyType::Pickup: u += c.body_pickup[a]; break;
    case BodyType::Utility: u += c.body_utility[a]; break;
    case BodyType::Van: u += c.body_van[a]; break;
    case BodyType::Car: break;
  }
  if (row.spouse) u += c.spouse[a];
  switch (row.income_bin) {
    case IncomeBin::Lt25: u += c.inc_lt25[a]; break;
    case IncomeBin::B25_50: u += c.inc_25_50[a]; break;
    case IncomeBin::B50_75: break;  // reference
    case IncomeBin::B75_150: u += c.inc_75_150[a]; break;
    case IncomeBin::Ge150: u += c.inc_ge150[a]; break;
  }
  if (row.race_white) u += c.race_white[a];
  switch (row.edu) {
    case 1: u += c.edu_hs[a]; break;
    case 2: u += c.edu_some_college[a]; break;
    case 3: u += c.edu_college[a]; break;
    case 4: u += c.edu_post_grad[a]; break;
    default: break;  // less than high school is the reference
  }
  u += c.n_drivers[a] * row.n_drivers;
  u += c.n_emp[a] * row.n_emp;
  if (row.hh_age > 60) u += c.age_gt60[a];
  u += c.n_kids[a] * row.n_kids;
  const bool age_lt27 = row.hh_age < 27;
  const bool age_27_35 = row.hh_age >= 27 && row.hh_age <= 35;
  if (row.kid_4)
    u += age_lt27 ? c.kid4_age_lt27[a] : age_27_35 ? c.kid4_age_27_35[a] : c.kid4_age_gt35[a];
  if (row.kid_5_11)
    u += age_lt27 ? c.kid511_age_lt27[a] : age_27_35 ? c.kid511_age_27_35[a] : c.kid511_age_gt35[a];
  if (row.kid_12_15) u += c.kid_12_15[a];
  if (row.house_tenure) u += c.house_tenure[a];
  u += c.ch_marriage[a] * row.ch.ch_marriage;
  switch (row.income_bin) {
    case IncomeBin::Lt25: u += c.ch_income_lt25[a] * row.ch.ch_income; break;
    case IncomeBin::B25_50: u += c.ch_income_25_50[a] * row.ch.ch_income; break;
    case IncomeBin::B50_75: u += c.ch_income_50_75[a] * row.ch.ch_income; break;
    case IncomeBin::B75_150: u += c.ch_income_75_150[a] * row.ch.ch_income; break;
    case IncomeBin::Ge150: u += c.ch_income_ge150[a] * row.ch.ch_income; break;
  }
  if (row.ch.ch_edu) u += c.ch_edu[a];
  if (row.ch.birth)
    u += age_lt27 ? c.birth_age_lt27[a] : age_27_35 ? c.birth_age_27_35[a] : c.birth_age_gt35[a];
  if (row.ch.kid_moveout) u += c.kid_moveout[a];
  u += c.ch_n_emp[a] * row.ch.ch_n_emp;
  u += c.ch_n_driver[a] * row.ch.ch_n_driver;
  if (row.ch.moved) u += c.moved[a];
  u += c.yrs_in_fu_decay[a] * std::exp(-row.yrs_in_fu / 3.0);
  return u;
}

std::array<double, 3> true_probabilities(const SynthConfig& config, const DgpRow& row) {
  if (row.edu < 0 || row.edu > 4)
    throw make_error("UnknownCovariate", "edu level " + std::to_string(row.edu));
  const DgpCoefficients& c = config.use_segments && row.n_veh == 1 ? config.dgp_one_vehicle
                                                                   : config.dgp_multi_vehicle;
  const double u_d = dgp_utility(c, row, 0);
  const double u_r = dgp_utility(c, row, 1);
  const double mx = std::max({0.0, u_d, u_r});
  const double ed = std::exp(u_d - mx), er = std::exp(u_r - mx), ek = std::exp(-mx);
  const double denom = ed + er + ek;
  return {ed / denom, ek / denom, er / denom};
}

// ---------------------------------------------------------------------------
// Panel generator

namespace {

const std::vector<std::pair<const char*, const char*>>& vehicle_catalog() {
  static const std::vector<std::pair<const char*, const char*>> catalog = {
      {"toyota", "camry"},    {"toyota", "corolla"},  {"toyota", "rav4"},
      {"toyota", "tacoma"},   {"toyota", "sienna"},   {"honda", "accord"},
      {"honda", "civic"},     {"honda", "crv"},       {"honda", "odyssey"},
      {"honda", "pilot"},     {"ford", "f150"},       {"ford", "focus"},
      {"ford", "escape"},     {"ford", "explorer"},   {"ford", "fusion"},
      {"chevrolet", "silverado"}, {"chevrolet", "malibu"}, {"chevrolet", "equinox"},
      {"chevrolet", "impala"}, {"chevrolet", "tahoe"}, {"nissan", "altima"},
      {"nissan", "sentra"},   {"nissan", "rogue"},    {"nissan", "frontier"},
      {"dodge", "ram"},       {"dodge", "caravan"},   {"dodge", "charger"},
      {"jeep", "cherokee"},   {"jeep", "wrangler"},   {"hyundai", "sonata"},
      {"hyundai", "elantra"}, {"kia", "sorento"},     {"kia", "optima"},
      {"subaru", "outback"},  {"subaru", "forester"}, {"volkswagen", "jetta"},
      {"volkswagen", "passat"}, {"bmw", "328i"},      {"mazda", "cx5"},
      {"gmc", "sierra"},
  };
  return catalog;
}

struct SimVehicle {
  int catalog_idx = 0;
  int model_year = 0;
  BodyType body = BodyType::Car;
  bool owned = true;
  int yrs_in_fu = 0;
};

struct HouseholdState {
  int hh_age = 40;
  int n_drivers = 1;
  int n_emp = 1;
  double income = 60.0;
  int edu = 1;
  bool spouse = false;
  bool house_tenure = false;
  bool house_type = true;
  std::vector<int> kid_ages;  // under 16 only
  // Window events toward the next wave.
  bool ev_moved = false, ev_retire = false, ev_death = false, ev_birth = false;
};

BodyType draw_body(Rng& rng, const SynthMarginals& m) {
  return static_cast<BodyType>(rng.categorical(std::span<const double>(m.body_shares)));
}

SimVehicle draw_initial_vehicle(Rng& rng, const SynthMarginals& m, int wave) {
  SimVehicle v;
  v.catalog_idx = static_cast<int>(rng.uniform_int(vehicle_catalog().size()));
  int vintage = static_cast<int>(std::lround(std::exp(rng.normal(m.vintage_log_mean, m.vintage_log_sd))));
  vintage = std::clamp(vintage, 0, 30);
  v.model_year = wave - vintage;
  v.body = draw_body(rng, m);
  v.owned = rng.bernoulli(m.owned_share_initial);
  v.yrs_in_fu = std::min(vintage, static_cast<int>(std::lround(vintage * std::sqrt(rng.uniform()))));
  return v;
}

SimVehicle draw_acquired_vehicle(Rng& rng, const SynthMarginals& m, int wave) {
  SimVehicle v;
  v.catalog_idx = static_cast<int>(rng.uniform_int(vehicle_catalog().size()));
  const double vt[3] = {0.45, 0.35, 0.20};
  const int vintage = static_cast<int>(rng.categorical(std::span<const double>(vt, 3)));
  v.model_year = wave - vintage;
  v.body = draw_body(rng, m);
  v.owned = !rng.bernoulli(m.leased_share_new);
  v.yrs_in_fu = 0;
  return v;
}

double draw_base_income(Rng& rng, const SynthMarginals& m) {
  const std::size_t bin = rng.categorical(std::span<const double>(m.income_shares));
  switch (bin) {
    case 0: return rng.uniform(8.0, 25.0);
    case 1: return rng.uniform(25.0, 50.0);
    case 2: return rng.uniform(50.0, 75.0);
    case 3: return rng.uniform(75.0, 150.0);
    default: return rng.uniform(150.0, 320.0);
  }
}

HouseholdWaveStatus make_status(const std::string& hh_id, int wave, const HouseholdState& s,
                                int n_veh, const std::string& race) {
  HouseholdWaveStatus st;
  st.household_id = hh_id;
  st.wave = wave;
  st.n_veh = n_veh;
  st.hh_age = s.hh_age;
  st.n_drivers = s.n_drivers;
  st.n_kids = static_cast<int>(s.kid_ages.size());
  st.kid_4 = false;
  st.kid_5_11 = false;
  st.kid_12_15 = false;
  st.oldest_kid_age = -1;
  st.youngest_kid_age = -1;
  for (int a : s.kid_ages) {
    if (a <= 4) st.kid_4 = true;
    if (a >= 5 && a <= 11) st.kid_5_11 = true;
    if (a >= 12 && a <= 15) st.kid_12_15 = true;
    st.oldest_kid_age = std::max(st.oldest_kid_age, a);
    st.youngest_kid_age = st.youngest_kid_age < 0 ? a : std::min(st.youngest_kid_age, a);
  }
  st.n_emp = s.n_emp;
  st.income_thousands = s.income;
  st.income_bin = income_bin_from_thousands(s.income);
  st.edu = s.edu;
  st.spouse = s.spouse;
  st.house_tenure = s.house_tenure;
  st.house_type = s.house_type;
  st.race = race;
  st.birth_flag = s.ev_birth ? 1 : 0;
  st.retire_flag = s.ev_retire ? 1 : 0;
  st.death_flag = s.ev_death ? 1 : 0;
  st.moved_flag = s.ev_moved ? 1 : 0;
  return st;
}

struct HouseholdResult {
  std::vector<SynthVehicleRow> vehicles;
  std::vector<HouseholdWaveStatus> statuses;
};

HouseholdResult simulate_household(const SynthConfig& config, std::size_t h) {
  const SynthMarginals& m = config.marginals;
  Rng rng(derive_seed(config.seed, "household", static_cast<std::uint64_t>(h)));

  char buf[32];
  std::snprintf(buf, sizeof(buf), "H%06zu", h);
  const std::string hh_id(buf);
  std::snprintf(buf, sizeof(buf), "p%06zu", h);
  const std::string head_id(buf);

  static const char* race_names[4] = {"asian", "white", "black", "hispanic"};
  const std::string race = race_names[rng.categorical(std::span<const double>(m.race_shares))];

  HouseholdState s;
  s.hh_age = std::clamp(static_cast<int>(std::lround(rng.normal(m.hh_age_mean, m.hh_age_sd))), 21, 80);
  s.spouse = rng.bernoulli(m.spouse_share);
  s.house_tenure = rng.bernoulli(m.tenure_share);
  s.house_type = rng.bernoulli(m.house_share);
  s.edu = static_cast<int>(rng.categorical(std::span<const double>(m.edu_shares)));
  const double base_income = draw_base_income(rng, m);
  s.income = base_income;
  s.n_drivers = 1 + (s.spouse ? 1 : 0) + (rng.bernoulli(0.12) ? 1 : 0);
  s.n_emp = std::min(s.n_drivers, (rng.bernoulli(0.85) ? 1 : 0) + (s.spouse && rng.bernoulli(0.6) ? 1 : 0));
  const int n_init_kids = std::min(4, s.hh_age < 50 ? rng.poisson(0.9) : rng.poisson(0.1));
  for (int i = 0; i < n_init_kids; ++i) s.kid_ages.push_back(static_cast<int>(rng.uniform_int(16)));

  const double cluster_effect = config.cluster_effect_sd > 0.0
                                    ? rng.normal(0.0, config.cluster_effect_sd)
                                    : 0.0;

  const int fleet_target = 1 + static_cast<int>(rng.categorical(std::span<const double>(m.fleet_shares)));
  std::vector<SimVehicle> roster;
  for (int i = 0; i < fleet_target; ++i)
    roster.push_back(draw_initial_vehicle(rng, m, config.first_wave));

  // Covariate trajectory first; vehicle outcomes never feed back into it.
  std::vector<HouseholdState> states;
  states.push_back(s);
  for (int t = 0; t + 1 < config.n_waves; ++t) {
    HouseholdState cur = states.back();  // events of window t get stored here
    HouseholdState nxt = cur;
    cur.ev_moved = rng.bernoulli(m.moved_rate);
    cur.ev_retire = nxt.n_emp > 0 &&
                    rng.bernoulli(cur.hh_age > 55 ? m.retire_rate_old : m.retire_rate_young);
    if (cur.ev_retire) nxt.n_emp = std::max(0, nxt.n_emp - 1);
    cur.ev_death = rng.bernoulli(m.death_rate);
    if (cur.spouse) {
      if (rng.bernoulli(m.decouple_rate)) {
        nxt.spouse = false;
        nxt.n_drivers = std::max(1, nxt.n_drivers - 1);
      }
    } else if (rng.bernoulli(m.couple_rate)) {
      nxt.spouse = true;
      nxt.n_drivers = std::min(4, nxt.n_drivers + 1);
    }
    const double birth_rate = cur.hh_age <= 30   ? m.birth_rate_lt30
                              : cur.hh_age <= 40 ? m.birth_rate_30_40
                                                 : m.birth_rate_gt40;
    cur.ev_birth = rng.bernoulli(birth_rate);
    for (int& a : nxt.kid_ages) a += config.wave_step;
    if (cur.ev_birth) nxt.kid_ages.push_back(rng.bernoulli(0.5) ? 0 : 1);
    std::erase_if(nxt.kid_ages, [](int a) { return a >= 16; });
    std::sort(nxt.kid_ages.begin(), nxt.kid_ages.end());
    if (cur.edu < 4 && rng.bernoulli(m.edu_increase_rate)) nxt.edu = cur.edu + 1;
    nxt.income = std::max(3.0, base_income + m.income_ar_rho * (cur.income - base_income) +
                                   rng.normal(0.0, m.income_noise_sd));
    if (rng.bernoulli(0.08))
      nxt.n_emp = std::min(std::min(3, nxt.n_drivers), nxt.n_emp + 1);
    else if (rng.bernoulli(0.08))
      nxt.n_emp = std::max(0, nxt.n_emp - 1);
    if (rng.bernoulli(0.06))
      nxt.n_drivers = std::min(4, nxt.n_drivers + 1);
    else if (rng.bernoulli(0.06))
      nxt.n_drivers = std::max(1, nxt.n_drivers - 1);
    nxt.n_emp = std::min(nxt.n_emp, nxt.n_drivers);
    nxt.hh_age = cur.hh_age + config.wave_step;
    if (cur.ev_moved) {
      if (rng.bernoulli(0.25)) nxt.house_tenure = !nxt.house_tenure;
      if (rng.bernoulli(0.15)) nxt.house_type = !nxt.house_type;
    }
    nxt.ev_moved = nxt.ev_retire = nxt.ev_death = nxt.ev_birth = false;
    states.back() = cur;
    states.push_back(nxt);
  }

  HouseholdResult out;
  std::vector<HouseholdWaveStatus> statuses;
  for (int t = 0; t < config.n_waves; ++t) {
    const int wave = config.first_wave + t * config.wave_step;
    statuses.push_back(make_status(hh_id, wave, states[static_cast<std::size_t>(t)], 0, race));
  }

  auto to_record = [&](const SimVehicle& v, int wave) {
    VehicleWaveRecord rec;
    const auto& [manu, make] = vehicle_catalog()[static_cast<std::size_t>(v.catalog_idx)];
    rec.key.head_person_id = head_id;
    rec.key.model_year = v.model_year;
    rec.key.manufacturer = manu;
    rec.key.make = make;
    rec.key.body_type = v.body;
    rec.household_id = hh_id;
    rec.wave = wave;
    rec.vintage = std::max(0, wave - v.model_year);
    rec.yrs_in_fu = v.yrs_in_fu;
    rec.ownership = v.owned ? Ownership::Owned : Ownership::Leased;
    return rec;
  };

  for (int t = 0; t < config.n_waves; ++t) {
    const int wave = config.first_wave + t * config.wave_step;
    statuses[static_cast<std::size_t>(t)].n_veh = static_cast<int>(roster.size());
    const bool last = t + 1 == config.n_waves;

    if (last) {
      for (const SimVehicle& v : roster) {
        SynthVehicleRow row;
        row.rec = to_record(v, wave);
        row.rec.outcome = Outcome::Censored;
        out.vehicles.push_back(std::move(row));
      }
      break;
    }

    const ChangeVars ch = derive_change_variables(statuses[static_cast<std::size_t>(t)],
                                                  statuses[static_cast<std::size_t>(t + 1)],
                                                  config.wave_step);
    const HouseholdWaveStatus& st = statuses[static_cast<std::size_t>(t)];

    std::vector<SimVehicle> next_roster;
    int n_acquisitions = 0;
    bool any_disposed = false;
    for (const SimVehicle& v : roster) {
      SynthVehicleRow row;
      row.rec = to_record(v, wave);

      DgpRow d;
      d.vintage = row.rec.vintage;
      d.yrs_in_fu = v.yrs_in_fu;
      d.owned = v.owned;
      d.body = v.body;
      d.n_veh = st.n_veh;
      d.hh_age = st.hh_age;
      d.n_drivers = st.n_drivers;
      d.n_kids = st.n_kids;
      d.kid_4 = st.kid_4;
      d.kid_5_11 = st.kid_5_11;
      d.kid_12_15 = st.kid_12_15;
      d.n_emp = st.n_emp;
      d.income_bin = st.income_bin;
      d.edu = st.edu;
      d.spouse = st.spouse;
      d.house_tenure = st.house_tenure;
      d.race_white = race == "white";
      d.ch = ch;

      const DgpCoefficients& coefs = config.use_segments && d.n_veh == 1
                                         ? config.dgp_one_vehicle
                                         : config.dgp_multi_vehicle;
      const double u_d = dgp_utility(coefs, d, 0) + cluster_effect;
      const double u_r = dgp_utility(coefs, d, 1) + cluster_effect;
      const double mx = std::max({0.0, u_d, u_r});
      const double ed = std::exp(u_d - mx), er = std::exp(u_r - mx), ek = std::exp(-mx);
      const double denom = ed + er + ek;
      row.true_probs = {ed / denom, ek / denom, er / denom};

      row.u_draw = rng.uniform();
      if (row.u_draw < row.true_probs[0])
        row.rec.outcome = Outcome::Disposed;
      else if (row.u_draw < row.true_probs[0] + row.true_probs[1])
        row.rec.outcome = Outcome::Kept;
      else
        row.rec.outcome = Outcome::Replaced;

      if (row.rec.outcome == Outcome::Kept) {
        SimVehicle kept = v;
        kept.yrs_in_fu += config.wave_step;
        if (!kept.owned && rng.bernoulli(m.lease_buyout_rate)) kept.owned = true;
        next_roster.push_back(kept);
      } else if (row.rec.outcome == Outcome::Replaced) {
        ++n_acquisitions;
      } else {
        any_disposed = true;
      }
      out.vehicles.push_back(std::move(row));
    }
    const int next_wave = wave + config.wave_step;
    for (int i = 0; i < n_acquisitions; ++i)
      next_roster.push_back(draw_acquired_vehicle(rng, m, next_wave));
    // Fleet growth toward the household's target size; suppressed in waves
    // with a disposal so growth acquisitions do not relabel true disposals.
    if (!any_disposed && static_cast<int>(next_roster.size()) < fleet_target &&
        rng.bernoulli(m.fleet_growth_rate))
      next_roster.push_back(draw_acquired_vehicle(rng, m, next_wave));
    if (next_roster.empty()) next_roster.push_back(draw_acquired_vehicle(rng, m, next_wave));
    roster = std::move(next_roster);
  }

  out.statuses = std::move(statuses);
  return out;
}

}  // namespace

SynthOutput generate_panel(const SynthConfig& config, int threads) {
  config.validate();
  std::vector<HouseholdResult> results(config.n_households);
  parallel_for(config.n_households, threads,
               [&](std::size_t h) { results[h] = simulate_household(config, h); });
  SynthOutput out;
  for (auto& r : results) {
    out.vehicles.insert(out.vehicles.end(), std::make_move_iterator(r.vehicles.begin()),
                        std::make_move_iterator(r.vehicles.end()));
    out.statuses.insert(out.statuses.end(), std::make_move_iterator(r.statuses.begin()),
                        std::make_move_iterator(r.statuses.end()));
  }
  return out;
}

void write_vehicles_csv(const SynthOutput& out, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"household_id", "wave", "head_person_id", "model_year", "manufacturer",
              "make",         "body_type", "ownership", "yrs_in_fu"};
  t.rows.reserve(out.vehicles.size());
  for (const auto& v : out.vehicles) {
    t.rows.push_back({v.rec.household_id, std::to_string(v.rec.wave), v.rec.key.head_person_id,
                      std::to_string(v.rec.key.model_year), v.rec.key.manufacturer,
                      v.rec.key.make, std::string(to_string(v.rec.key.body_type)),
                      std::string(to_string(v.rec.ownership)), std::to_string(v.rec.yrs_in_fu)});
  }
  csv::write_file(path, t);
}

void write_households_csv(const SynthOutput& out, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"household_id", "wave", "n_veh", "hh_age", "n_drivers", "n_kids", "kid_4",
              "kid_5_11", "kid_12_15", "n_emp", "income_thousands", "edu", "spouse",
              "house_tenure", "house_type", "race", "oldest_kid_age", "youngest_kid_age",
              "birth", "retire", "death", "moved"};
  t.rows.reserve(out.statuses.size());
  for (const auto& s : out.statuses) {
    t.rows.push_back({s.household_id, std::to_string(s.wave), std::to_string(s.n_veh),
                      std::to_string(s.hh_age), std::to_string(s.n_drivers),
                      std::to_string(s.n_kids), s.kid_4 ? "1" : "0", s.kid_5_11 ? "1" : "0",
                      s.kid_12_15 ? "1" : "0", std::to_string(s.n_emp),
                      csv::format_double(s.income_thousands), std::to_string(s.edu),
                      s.spouse ? "1" : "0", s.house_tenure ? "1" : "0", s.house_type ? "1" : "0",
                      s.race,
                      s.oldest_kid_age >= 0 ? std::to_string(s.oldest_kid_age) : "",
                      s.youngest_kid_age >= 0 ? std::to_string(s.youngest_kid_age) : "",
                      std::to_string(s.birth_flag > 0 ? 1 : 0),
                      std::to_string(s.retire_flag > 0 ? 1 : 0),
                      std::to_string(s.death_flag > 0 ? 1 : 0),
                      std::to_string(s.moved_flag > 0 ? 1 : 0)});
  }
  csv::write_file(path, t);
}

void write_truth_jsonl(const SynthOutput& out, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw make_error("IoError", "cannot write " + path.string());
  for (const auto& v : out.vehicles) {
    nlohmann::json j;
    j["household_id"] = v.rec.household_id;
    j["wave"] = v.rec.wave;
    j["vehicle_key"] = v.rec.key.to_string();
    j["p_disposed"] = v.true_probs[0];
    j["p_kept"] = v.true_probs[1];
    j["p_replaced"] = v.true_probs[2];
    j["u_draw"] = v.u_draw;
    j["outcome"] = std::string(to_string(v.rec.outcome));
    f << j.dump() << "\n";
  }
}

Dataset truth_dataset(const SynthOutput& out, int wave_step) {
  std::vector<VehicleWaveRecord> labeled;
  labeled.reserve(out.vehicles.size());
  for (const auto& v : out.vehicles) labeled.push_back(v.rec);
  return build_model_dataset(labeled, out.statuses, wave_step);
}

}  // namespace fleetchurn
