#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace fleetchurn {

// Minimal TOML reader covering the subset used by our config files:
// [section.sub] headers, key = value with strings, integers, floats,
// booleans, and flat arrays; '#' comments. Returns a JSON object.
nlohmann::json toml_parse(const std::string& text);

// Loads a config file; dispatches on extension (.toml or .json).
nlohmann::json load_config(const std::filesystem::path& path);

}  // namespace fleetchurn
