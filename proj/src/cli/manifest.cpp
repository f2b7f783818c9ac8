#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "dgsan/cli.hpp"
#include "dgsan/errors.hpp"

namespace dgsan::cli {

std::string git_blob_sha1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string header = "blob " + std::to_string(body.size());
  header.push_back('\0');

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, body.data(), body.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");

  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof(byte), "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["started"] = started;
  j["finished"] = finished;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) j["artifacts"].push_back(a.string());
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& p : inputs)
    j["inputs"].push_back({{"path", p.string()}, {"git_blob_sha1", git_blob_sha1(p)}});
  return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
  for (const auto& a : artifacts)
    if (!std::filesystem::exists(a)) throw std::runtime_error("manifest artifact missing: " + a.string());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace dgsan::cli
