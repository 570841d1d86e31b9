#include "fleetchurn/panel.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "fleetchurn/csv.hpp"
#include "fleetchurn/error.hpp"
#include "fleetchurn/log.hpp"

namespace fleetchurn {

VehicleKey derive_vehicle_key(const RawVehicleRecord& raw) {
  auto require = [&](const std::string& v, const char* field) {
    if (normalize_token(v).empty()) throw make_error("MissingField", std::string(field));
  };
  require(raw.head_person_id, "head_person_id");
  require(raw.manufacturer, "manufacturer");
  require(raw.make, "make");
  require(raw.body_type, "body_type");
  if (raw.model_year == 0) throw make_error("MissingField", "model_year");
  if (raw.model_year < 1900 || raw.model_year > raw.wave + 1)
    throw make_error("InvalidYear", "model_year " + std::to_string(raw.model_year) +
                                        " outside [1900, " + std::to_string(raw.wave + 1) + "]");
  VehicleKey key;
  key.head_person_id = normalize_token(raw.head_person_id);
  key.model_year = raw.model_year;
  key.manufacturer = normalize_token(raw.manufacturer);
  key.make = normalize_token(raw.make);
  key.body_type = body_type_from_string(raw.body_type);
  return key;
}

namespace {

struct WaveRoster {
  int wave = 0;
  std::vector<VehicleWaveRecord> records;
};

// Resolves duplicate keys within one wave per the configured policy.
// Returns indices of records to keep for labeling output.
void resolve_duplicates(WaveRoster& roster, const std::string& household_id, DuplicatePolicy policy,
                        LabelStats* stats, std::vector<bool>& emit) {
  std::map<VehicleKey, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < roster.records.size(); ++i)
    by_key[roster.records[i].key].push_back(i);
  emit.assign(roster.records.size(), true);
  bool any_dup = false;
  for (auto& [key, idxs] : by_key) {
    if (idxs.size() < 2) continue;
    any_dup = true;
    switch (policy) {
      case DuplicatePolicy::Error:
        throw make_error("DuplicateKeyUnresolved",
                         "key '" + key.to_string() + "' duplicated in household " + household_id +
                             " wave " + std::to_string(roster.wave));
      case DuplicatePolicy::Suffix:
        for (std::size_t j = 1; j < idxs.size(); ++j)
          roster.records[idxs[j]].key.disamb = static_cast<int>(j);
        break;
      case DuplicatePolicy::Drop:
        log::warn("dropping " + std::to_string(idxs.size()) + " duplicate rows for key '" +
                  key.to_string() + "' in household " + household_id + " wave " +
                  std::to_string(roster.wave));
        for (std::size_t j : idxs) emit[j] = false;
        if (stats) stats->n_dropped_duplicates += idxs.size();
        break;
    }
  }
  if (any_dup && stats) ++stats->n_duplicate_waves;
}

void label_household(std::vector<WaveRoster>& waves, const std::string& household_id,
                     DuplicatePolicy policy, LabelStats* stats,
                     std::vector<VehicleWaveRecord>& out) {
  for (std::size_t i = 1; i < waves.size(); ++i)
    if (waves[i].wave <= waves[i - 1].wave)
      throw make_error("UnsortedWaves", "household " + household_id);

  std::vector<std::vector<bool>> emit(waves.size());
  for (std::size_t i = 0; i < waves.size(); ++i)
    resolve_duplicates(waves[i], household_id, policy, stats, emit[i]);

  std::vector<std::set<VehicleKey>> key_sets(waves.size());
  for (std::size_t i = 0; i < waves.size(); ++i)
    for (const auto& r : waves[i].records) key_sets[i].insert(r.key);

  for (std::size_t i = 0; i < waves.size(); ++i) {
    const bool last = (i + 1 == waves.size());
    bool any_acquisition = false;
    if (!last) {
      for (const auto& k : key_sets[i + 1])
        if (!key_sets[i].count(k)) {
          any_acquisition = true;
          break;
        }
    }
    for (std::size_t j = 0; j < waves[i].records.size(); ++j) {
      if (!emit[i][j]) continue;
      VehicleWaveRecord rec = waves[i].records[j];
      if (last) {
        rec.outcome = Outcome::Censored;
        if (stats) ++stats->n_censored;
      } else if (key_sets[i + 1].count(rec.key)) {
        rec.outcome = Outcome::Kept;
      } else if (any_acquisition) {
        rec.outcome = Outcome::Replaced;
      } else {
        rec.outcome = Outcome::Disposed;
      }
      out.push_back(std::move(rec));
    }
  }
}

}  // namespace

std::vector<VehicleWaveRecord> label_transactions(std::vector<VehicleWaveRecord> records,
                                                  DuplicatePolicy policy, LabelStats* stats) {
  if (stats) *stats = LabelStats{};
  if (stats) stats->n_records = records.size();

  std::map<std::string, std::map<int, WaveRoster>> grouped;
  for (auto& r : records) {
    auto& roster = grouped[r.household_id][r.wave];
    roster.wave = r.wave;
    roster.records.push_back(std::move(r));
  }

  std::vector<VehicleWaveRecord> out;
  out.reserve(records.size());
  for (auto& [hh, by_wave] : grouped) {
    std::vector<WaveRoster> waves;
    waves.reserve(by_wave.size());
    for (auto& [w, roster] : by_wave) waves.push_back(std::move(roster));
    label_household(waves, hh, policy, stats, out);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.household_id != b.household_id) return a.household_id < b.household_id;
    if (a.wave != b.wave) return a.wave < b.wave;
    return a.key < b.key;
  });
  return out;
}

ChangeVars derive_change_variables(const HouseholdWaveStatus& now, const HouseholdWaveStatus& next,
                                   int wave_step) {
  if (now.household_id != next.household_id)
    throw make_error("HouseholdMismatch", now.household_id + " vs " + next.household_id);
  if (next.wave - now.wave != wave_step)
    throw make_error("NonConsecutiveWaves", "waves " + std::to_string(now.wave) + " -> " +
                                                std::to_string(next.wave));
  ChangeVars ch;
  ch.ch_income = next.income_thousands - now.income_thousands;
  ch.ch_edu = next.edu > now.edu;
  ch.ch_n_emp = next.n_emp - now.n_emp;
  ch.ch_n_driver = next.n_drivers - now.n_drivers;
  if (!now.spouse && next.spouse)
    ch.ch_marriage = 1;
  else if (now.spouse && !next.spouse)
    ch.ch_marriage = -1;

  // Explicit flags win; fallbacks derive the event from composition deltas.
  if (now.birth_flag >= 0)
    ch.birth = now.birth_flag > 0;
  else
    ch.birth = next.youngest_kid_age >= 0 && next.youngest_kid_age <= 1;

  const bool kids_emptied = now.n_kids > 0 && next.n_kids == 0;
  const bool had_teen = now.oldest_kid_age >= 0 ? now.oldest_kid_age >= 16 - wave_step
                                                : now.kid_12_15;
  ch.kid_moveout = kids_emptied && had_teen && next.n_drivers <= now.n_drivers;

  ch.retire = now.retire_flag > 0;
  ch.death = now.death_flag > 0;
  ch.moved = now.moved_flag > 0;
  return ch;
}

namespace {

int to_int(const std::string& s, const char* field) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw make_error("MissingField", std::string(field) + " = '" + s + "'");
  return v;
}

double to_double(const std::string& s, const char* field) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw make_error("MissingField", std::string(field) + " = '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  std::string n = normalize_token(s);
  return n == "1" || n == "true" || n == "yes";
}

// Column lookup honoring the optional rename mapping.
struct Mapped {
  const csv::Table& t;
  const nlohmann::json* map;

  int find(const std::string& canonical) const {
    std::string name = canonical;
    if (map && map->contains(canonical)) name = (*map)[canonical].get<std::string>();
    return t.column(name);
  }
  int require(const std::string& canonical) const {
    int c = find(canonical);
    if (c < 0) throw make_error("MissingField", "missing column '" + canonical + "'");
    return c;
  }
};

}  // namespace

PanelData load_panel(const std::filesystem::path& vehicles_csv,
                     const std::filesystem::path& households_csv, const nlohmann::json* mapping) {
  PanelData data;
  const nlohmann::json* vmap = nullptr;
  const nlohmann::json* hmap = nullptr;
  if (mapping) {
    if (mapping->contains("vehicles")) vmap = &(*mapping)["vehicles"];
    if (mapping->contains("households")) hmap = &(*mapping)["households"];
  }

  csv::Table vt = csv::read_file(vehicles_csv);
  Mapped vm{vt, vmap};
  const int c_hh = vm.require("household_id");
  const int c_wave = vm.require("wave");
  const int c_head = vm.require("head_person_id");
  const int c_my = vm.require("model_year");
  const int c_manu = vm.require("manufacturer");
  const int c_make = vm.require("make");
  const int c_body = vm.require("body_type");
  const int c_own = vm.require("ownership");
  const int c_yrs = vm.find("yrs_in_fu");
  const int c_acq = vm.find("acq_year");
  if (c_yrs < 0 && c_acq < 0) throw make_error("MissingField", "need yrs_in_fu or acq_year");

  data.stats.n_vehicle_rows = vt.rows.size();
  for (const auto& row : vt.rows) {
    try {
      RawVehicleRecord raw;
      raw.household_id = row[static_cast<std::size_t>(c_hh)];
      raw.wave = to_int(row[static_cast<std::size_t>(c_wave)], "wave");
      raw.head_person_id = row[static_cast<std::size_t>(c_head)];
      raw.model_year = to_int(row[static_cast<std::size_t>(c_my)], "model_year");
      raw.manufacturer = row[static_cast<std::size_t>(c_manu)];
      raw.make = row[static_cast<std::size_t>(c_make)];
      raw.body_type = row[static_cast<std::size_t>(c_body)];
      raw.ownership = row[static_cast<std::size_t>(c_own)];
      if (c_yrs >= 0)
        raw.yrs_in_fu = to_int(row[static_cast<std::size_t>(c_yrs)], "yrs_in_fu");
      else
        raw.yrs_in_fu = raw.wave - to_int(row[static_cast<std::size_t>(c_acq)], "acq_year");

      VehicleWaveRecord rec;
      rec.key = derive_vehicle_key(raw);
      rec.household_id = raw.household_id;
      rec.wave = raw.wave;
      rec.vintage = std::max(0, raw.wave - raw.model_year);
      rec.yrs_in_fu = raw.yrs_in_fu;
      rec.ownership = ownership_from_string(raw.ownership);
      if (rec.yrs_in_fu < 0 || rec.yrs_in_fu > rec.vintage + 1)
        throw make_error("MissingField", "yrs_in_fu inconsistent with vintage");
      data.vehicles.push_back(std::move(rec));
    } catch (const Error& e) {
      ++data.stats.n_missing_dropped;
      log::debug(std::string("dropping vehicle row: ") + e.what());
    }
  }

  csv::Table ht = csv::read_file(households_csv);
  Mapped hm{ht, hmap};
  const int h_hh = hm.require("household_id");
  const int h_wave = hm.require("wave");
  const int h_nveh = hm.require("n_veh");
  const int h_age = hm.require("hh_age");
  const int h_ndr = hm.require("n_drivers");
  const int h_nk = hm.require("n_kids");
  const int h_k4 = hm.find("kid_4");
  const int h_k511 = hm.find("kid_5_11");
  const int h_k1215 = hm.find("kid_12_15");
  const int h_nemp = hm.require("n_emp");
  const int h_inc = hm.require("income_thousands");
  const int h_edu = hm.require("edu");
  const int h_sp = hm.require("spouse");
  const int h_ht = hm.require("house_tenure");
  const int h_hty = hm.require("house_type");
  const int h_race = hm.require("race");
  const int h_oka = hm.find("oldest_kid_age");
  const int h_yka = hm.find("youngest_kid_age");
  const int h_birth = hm.find("birth");
  const int h_ret = hm.find("retire");
  const int h_dth = hm.find("death");
  const int h_mvd = hm.find("moved");

  data.stats.n_household_rows = ht.rows.size();
  for (const auto& row : ht.rows) {
    try {
      HouseholdWaveStatus s;
      auto cell = [&](int c) -> const std::string& { return row[static_cast<std::size_t>(c)]; };
      s.household_id = cell(h_hh);
      s.wave = to_int(cell(h_wave), "wave");
      s.n_veh = to_int(cell(h_nveh), "n_veh");
      s.hh_age = to_int(cell(h_age), "hh_age");
      s.n_drivers = to_int(cell(h_ndr), "n_drivers");
      s.n_kids = to_int(cell(h_nk), "n_kids");
      if (h_k4 >= 0) s.kid_4 = to_bool(cell(h_k4));
      if (h_k511 >= 0) s.kid_5_11 = to_bool(cell(h_k511));
      if (h_k1215 >= 0) s.kid_12_15 = to_bool(cell(h_k1215));
      s.n_emp = to_int(cell(h_nemp), "n_emp");
      s.income_thousands = to_double(cell(h_inc), "income_thousands");
      s.income_bin = income_bin_from_thousands(s.income_thousands);
      s.edu = to_int(cell(h_edu), "edu");
      s.spouse = to_bool(cell(h_sp));
      s.house_tenure = to_bool(cell(h_ht));
      s.house_type = to_bool(cell(h_hty));
      s.race = normalize_token(cell(h_race));
      if (h_oka >= 0 && !cell(h_oka).empty()) s.oldest_kid_age = to_int(cell(h_oka), "oldest_kid_age");
      if (h_yka >= 0 && !cell(h_yka).empty()) s.youngest_kid_age = to_int(cell(h_yka), "youngest_kid_age");
      if (h_birth >= 0 && !cell(h_birth).empty()) s.birth_flag = to_bool(cell(h_birth)) ? 1 : 0;
      if (h_ret >= 0 && !cell(h_ret).empty()) s.retire_flag = to_bool(cell(h_ret)) ? 1 : 0;
      if (h_dth >= 0 && !cell(h_dth).empty()) s.death_flag = to_bool(cell(h_dth)) ? 1 : 0;
      if (h_mvd >= 0 && !cell(h_mvd).empty()) s.moved_flag = to_bool(cell(h_mvd)) ? 1 : 0;
      data.statuses.push_back(std::move(s));
    } catch (const Error& e) {
      ++data.stats.n_missing_dropped;
      log::debug(std::string("dropping household row: ") + e.what());
    }
  }
  return data;
}

const std::vector<std::string>& model_feature_names() {
  static const std::vector<std::string> names = {
      "vintage",   "yrs_in_fu", "ownlease",  "vehtype",      "n_veh",  "hh_age",
      "n_drivers", "n_kids",    "kid_4",     "kid_5_11",     "kid_12_15", "n_emp",
      "income_bin", "edu",      "spouse",    "house_tenure", "house_type", "race",
      "ch_income", "ch_edu",    "birth",     "kid_moveout",  "retire", "death",
      "ch_n_emp",  "ch_n_driver", "moved",   "ch_marriage",  "wave"};
  return names;
}

Dataset build_model_dataset(const std::vector<VehicleWaveRecord>& labeled,
                            const std::vector<HouseholdWaveStatus>& statuses, int wave_step,
                            std::size_t* n_dropped) {
  std::unordered_map<std::string, const HouseholdWaveStatus*> status_by_key;
  status_by_key.reserve(statuses.size());
  for (const auto& s : statuses)
    status_by_key[s.household_id + "@" + std::to_string(s.wave)] = &s;

  // Race levels collected across all statuses, sorted for determinism.
  std::set<std::string> race_levels;
  for (const auto& s : statuses) race_levels.insert(s.race);

  Dataset d;
  auto add_numeric = [&](const std::string& name) {
    Column c;
    c.name = name;
    c.kind = ColumnKind::Numeric;
    d.columns.push_back(std::move(c));
  };
  auto add_categorical = [&](const std::string& name, std::vector<std::string> levels) {
    Column c;
    c.name = name;
    c.kind = ColumnKind::Categorical;
    c.levels = std::move(levels);
    d.columns.push_back(std::move(c));
  };
  add_numeric("vintage");
  add_numeric("yrs_in_fu");
  add_categorical("ownlease", {"leased", "owned"});
  add_categorical("vehtype", {"car", "pickup", "utility", "van"});
  add_numeric("n_veh");
  add_numeric("hh_age");
  add_numeric("n_drivers");
  add_numeric("n_kids");
  add_numeric("kid_4");
  add_numeric("kid_5_11");
  add_numeric("kid_12_15");
  add_numeric("n_emp");
  add_categorical("income_bin", {"lt_25", "25_50", "50_75", "75_150", "ge_150"});
  add_categorical("edu", {"lt_hs", "hs", "some_college", "college", "post_grad"});
  add_numeric("spouse");
  add_numeric("house_tenure");
  add_numeric("house_type");
  add_categorical("race", std::vector<std::string>(race_levels.begin(), race_levels.end()));
  add_numeric("ch_income");
  add_numeric("ch_edu");
  add_numeric("birth");
  add_numeric("kid_moveout");
  add_numeric("retire");
  add_numeric("death");
  add_numeric("ch_n_emp");
  add_numeric("ch_n_driver");
  add_numeric("moved");
  add_numeric("ch_marriage");
  add_numeric("wave");

  std::size_t dropped = 0;
  for (const auto& rec : labeled) {
    if (rec.outcome == Outcome::Censored) continue;
    auto now_it = status_by_key.find(rec.household_id + "@" + std::to_string(rec.wave));
    auto next_it = status_by_key.find(rec.household_id + "@" + std::to_string(rec.wave + wave_step));
    if (now_it == status_by_key.end() || next_it == status_by_key.end()) {
      ++dropped;
      continue;
    }
    const HouseholdWaveStatus& now = *now_it->second;
    ChangeVars ch = derive_change_variables(now, *next_it->second, wave_step);

    d.household_id.push_back(rec.household_id);
    d.wave.push_back(rec.wave);
    d.vehicle_key.push_back(rec.key.to_string());
    d.label.push_back(rec.outcome);

    std::size_t ci = 0;
    auto push = [&](double v) { d.columns[ci++].values.push_back(v); };
    push(rec.vintage);
    push(rec.yrs_in_fu);
    push(rec.ownership == Ownership::Owned ? 1.0 : 0.0);  // code: leased=0, owned=1
    push(static_cast<double>(rec.key.body_type));
    push(now.n_veh);
    push(now.hh_age);
    push(now.n_drivers);
    push(now.n_kids);
    push(now.kid_4 ? 1.0 : 0.0);
    push(now.kid_5_11 ? 1.0 : 0.0);
    push(now.kid_12_15 ? 1.0 : 0.0);
    push(now.n_emp);
    push(static_cast<double>(now.income_bin));
    push(now.edu);
    push(now.spouse ? 1.0 : 0.0);
    push(now.house_tenure ? 1.0 : 0.0);
    push(now.house_type ? 1.0 : 0.0);
    push(d.columns[17].level_code(now.race));
    push(ch.ch_income);
    push(ch.ch_edu ? 1.0 : 0.0);
    push(ch.birth ? 1.0 : 0.0);
    push(ch.kid_moveout ? 1.0 : 0.0);
    push(ch.retire ? 1.0 : 0.0);
    push(ch.death ? 1.0 : 0.0);
    push(ch.ch_n_emp);
    push(ch.ch_n_driver);
    push(ch.moved ? 1.0 : 0.0);
    push(ch.ch_marriage);
    push(rec.wave);
  }
  if (n_dropped) *n_dropped = dropped;
  d.sort_by_provenance();
  return d;
}

nlohmann::json summarize_panel(const Dataset& data, const LabelStats& label_stats,
                               std::size_t n_missing_dropped) {
  if (data.n_rows() == 0) throw make_error("EmptyPanel", "no modeled rows");
  nlohmann::json j;
  const std::size_t n = data.n_rows();
  j["n_modeled"] = n;
  j["n_censored"] = label_stats.n_censored;
  j["n_missing_dropped"] = n_missing_dropped;
  j["n_dropped_duplicates"] = label_stats.n_dropped_duplicates;

  std::array<std::size_t, 3> counts{0, 0, 0};
  for (Outcome o : data.label) counts[static_cast<std::size_t>(o)]++;
  nlohmann::json shares;
  shares["disposed"] = static_cast<double>(counts[0]) / static_cast<double>(n);
  shares["kept"] = static_cast<double>(counts[1]) / static_cast<double>(n);
  shares["replaced"] = static_cast<double>(counts[2]) / static_cast<double>(n);
  j["outcome_shares"] = shares;

  // Population mean plus per-outcome conditional means for every feature.
  // Categorical columns get per-level shares instead.
  nlohmann::json vars = nlohmann::json::object();
  static const char* outcome_names[3] = {"disposed", "kept", "replaced"};
  for (const auto& c : data.columns) {
    nlohmann::json v;
    if (c.kind == ColumnKind::Numeric) {
      double total = 0.0;
      std::array<double, 3> by_outcome{0, 0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        total += c.values[i];
        by_outcome[static_cast<std::size_t>(data.label[i])] += c.values[i];
      }
      v["mean"] = total / static_cast<double>(n);
      for (int o = 0; o < 3; ++o)
        v[outcome_names[o]] =
            counts[static_cast<std::size_t>(o)] ? by_outcome[static_cast<std::size_t>(o)] /
                                                      static_cast<double>(counts[static_cast<std::size_t>(o)])
                                                : 0.0;
    } else {
      for (std::size_t l = 0; l < c.levels.size(); ++l) {
        nlohmann::json lv;
        std::size_t total = 0;
        std::array<std::size_t, 3> by_outcome{0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) {
          if (static_cast<std::size_t>(c.values[i]) == l) {
            ++total;
            ++by_outcome[static_cast<std::size_t>(data.label[i])];
          }
        }
        lv["share"] = static_cast<double>(total) / static_cast<double>(n);
        for (int o = 0; o < 3; ++o)
          lv[outcome_names[o]] =
              counts[static_cast<std::size_t>(o)]
                  ? static_cast<double>(by_outcome[static_cast<std::size_t>(o)]) /
                        static_cast<double>(counts[static_cast<std::size_t>(o)])
                  : 0.0;
        v[c.levels[l]] = lv;
      }
    }
    vars[c.name] = v;
  }
  j["variables"] = vars;

  // Per-wave outcome distribution (plot-ready).
  std::map<int, std::array<std::size_t, 3>> by_wave;
  for (std::size_t i = 0; i < n; ++i)
    by_wave[data.wave[i]][static_cast<std::size_t>(data.label[i])]++;
  nlohmann::json waves = nlohmann::json::object();
  for (const auto& [w, cnt] : by_wave) {
    const double tot = static_cast<double>(cnt[0] + cnt[1] + cnt[2]);
    nlohmann::json wj;
    for (int o = 0; o < 3; ++o)
      wj[outcome_names[o]] = static_cast<double>(cnt[static_cast<std::size_t>(o)]) / tot;
    waves[std::to_string(w)] = wj;
  }
  j["outcome_by_wave"] = waves;
  return j;
}

}  // namespace fleetchurn
