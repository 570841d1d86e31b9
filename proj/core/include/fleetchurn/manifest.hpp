#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fleetchurn {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Every pipeline stage writes a manifest.json recording what went in and what
// came out. Deliberately timestamp-free so reruns are byte-identical.
struct Manifest {
  std::string stage;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;   // (path, sha256)
  std::vector<std::pair<std::string, std::string>> outputs;  // (path, sha256)

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void write(const std::filesystem::path& dir) const;
};

}  // namespace fleetchurn
