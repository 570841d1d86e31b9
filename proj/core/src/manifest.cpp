#include "fleetchurn/manifest.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "fleetchurn/error.hpp"

namespace fleetchurn {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw make_error("IoError", "cannot hash " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void Manifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.filename().string(), sha256_file(path));
}

void Manifest::add_output(const std::filesystem::path& path) {
  outputs.emplace_back(path.filename().string(), sha256_file(path));
}

void Manifest::write(const std::filesystem::path& dir) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  auto pairs = [](const std::vector<std::pair<std::string, std::string>>& v) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k, h] : v) o[k] = h;
    return o;
  };
  j["inputs"] = pairs(inputs);
  j["outputs"] = pairs(outputs);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw make_error("IoError", "cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

}  // namespace fleetchurn
