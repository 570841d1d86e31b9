#include "fleetchurn/types.hpp"

#include <algorithm>
#include <cctype>

#include "fleetchurn/error.hpp"

namespace fleetchurn {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Disposed: return "disposed";
    case Outcome::Kept: return "kept";
    case Outcome::Replaced: return "replaced";
    case Outcome::Censored: return "censored";
  }
  return "?";
}

std::string_view to_string(BodyType b) {
  switch (b) {
    case BodyType::Car: return "car";
    case BodyType::Pickup: return "pickup";
    case BodyType::Utility: return "utility";
    case BodyType::Van: return "van";
  }
  return "?";
}

std::string_view to_string(Ownership o) {
  return o == Ownership::Owned ? "owned" : "leased";
}

std::string_view to_string(IncomeBin b) {
  switch (b) {
    case IncomeBin::Lt25: return "lt_25";
    case IncomeBin::B25_50: return "25_50";
    case IncomeBin::B50_75: return "50_75";
    case IncomeBin::B75_150: return "75_150";
    case IncomeBin::Ge150: return "ge_150";
  }
  return "?";
}

Outcome outcome_from_string(std::string_view s) {
  std::string n = normalize_token(s);
  if (n == "disposed") return Outcome::Disposed;
  if (n == "kept") return Outcome::Kept;
  if (n == "replaced") return Outcome::Replaced;
  if (n == "censored") return Outcome::Censored;
  throw make_error("UnknownLabel", "unknown outcome '" + std::string(s) + "'");
}

BodyType body_type_from_string(std::string_view s) {
  std::string n = normalize_token(s);
  if (n == "car") return BodyType::Car;
  if (n == "pickup" || n == "truck") return BodyType::Pickup;
  if (n == "utility" || n == "suv") return BodyType::Utility;
  if (n == "van") return BodyType::Van;
  throw make_error("MissingField", "unknown body type '" + std::string(s) + "'");
}

Ownership ownership_from_string(std::string_view s) {
  std::string n = normalize_token(s);
  if (n == "owned" || n == "own" || n == "1") return Ownership::Owned;
  if (n == "leased" || n == "lease" || n == "0") return Ownership::Leased;
  throw make_error("MissingField", "unknown ownership '" + std::string(s) + "'");
}

IncomeBin income_bin_from_thousands(double k) {
  if (k < 25.0) return IncomeBin::Lt25;
  if (k < 50.0) return IncomeBin::B25_50;
  if (k < 75.0) return IncomeBin::B50_75;
  if (k < 150.0) return IncomeBin::B75_150;
  return IncomeBin::Ge150;
}

std::string normalize_token(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string VehicleKey::to_string() const {
  std::string s = head_person_id + "|" + std::to_string(model_year) + "|" + manufacturer + "|" +
                  make + "|" + std::string(fleetchurn::to_string(body_type));
  if (disamb > 0) s += "#" + std::to_string(disamb);
  return s;
}

}  // namespace fleetchurn
