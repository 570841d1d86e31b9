#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace fleetchurn {

// Modeling class order is fixed everywhere: Disposed < Kept < Replaced.
enum class Outcome : std::uint8_t { Disposed = 0, Kept = 1, Replaced = 2, Censored = 3 };
inline constexpr int kNumClasses = 3;

enum class BodyType : std::uint8_t { Car = 0, Pickup = 1, Utility = 2, Van = 3 };
enum class Ownership : std::uint8_t { Owned = 0, Leased = 1 };

// Household income bins with edges at 25/50/75/150 (thousands).
enum class IncomeBin : std::uint8_t { Lt25 = 0, B25_50 = 1, B50_75 = 2, B75_150 = 3, Ge150 = 4 };

std::string_view to_string(Outcome o);
std::string_view to_string(BodyType b);
std::string_view to_string(Ownership o);
std::string_view to_string(IncomeBin b);

Outcome outcome_from_string(std::string_view s);
BodyType body_type_from_string(std::string_view s);
Ownership ownership_from_string(std::string_view s);

IncomeBin income_bin_from_thousands(double income_thousands);

// Case-folded, whitespace-trimmed copy used for identity key comparison.
std::string normalize_token(std::string_view s);

struct VehicleKey {
  std::string head_person_id;  // normalized
  int model_year = 0;
  std::string manufacturer;  // normalized
  std::string make;          // normalized
  BodyType body_type = BodyType::Car;
  // Disambiguation counter assigned when duplicate keys are suffix-resolved.
  int disamb = 0;

  bool operator==(const VehicleKey&) const = default;
  auto operator<=>(const VehicleKey&) const = default;
  std::string to_string() const;
};

struct VehicleWaveRecord {
  VehicleKey key;
  std::string household_id;
  int wave = 0;       // survey year
  int vintage = 0;    // wave - model_year
  int yrs_in_fu = 0;  // years since acquisition
  Ownership ownership = Ownership::Owned;
  Outcome outcome = Outcome::Censored;
};

struct HouseholdWaveStatus {
  std::string household_id;
  int wave = 0;
  int n_veh = 0;
  int hh_age = 0;  // age of head or spouse
  int n_drivers = 0;
  int n_kids = 0;
  bool kid_4 = false;
  bool kid_5_11 = false;
  bool kid_12_15 = false;
  int n_emp = 0;
  IncomeBin income_bin = IncomeBin::B50_75;
  double income_thousands = 0.0;
  int edu = 0;  // 0 = less than high school .. 4 = post-graduate
  bool spouse = false;
  bool house_tenure = false;  // owner
  bool house_type = false;    // lives in a house
  std::string race;
  // Optional child ages used by the event-derivation fallbacks; -1 = unknown.
  int oldest_kid_age = -1;
  int youngest_kid_age = -1;
  // Optional explicit event flags (surveyed between this wave and the next);
  // -1 = not supplied, derive where a fallback exists.
  int birth_flag = -1;
  int retire_flag = -1;
  int death_flag = -1;
  int moved_flag = -1;
};

struct ChangeVars {
  double ch_income = 0.0;  // thousands
  bool ch_edu = false;     // education level increased
  bool birth = false;
  bool kid_moveout = false;  // empty nest
  bool retire = false;
  bool death = false;
  int ch_n_emp = 0;
  int ch_n_driver = 0;
  bool moved = false;
  int ch_marriage = 0;  // coupling up = 1, no change = 0, decoupling = -1
};

}  // namespace fleetchurn
