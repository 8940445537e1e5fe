#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cca/error.hpp"
#include "cca/version.hpp"

namespace cca {

/// FNV-1a 64-bit over a file's bytes; a provenance fingerprint for run
/// manifests, not a cryptographic hash.
inline std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a64:%016llx",
                static_cast<unsigned long long>(h));
  return out;
}

/// Everything needed to reproduce one CLI run: the command, the fully
/// resolved configuration, input fingerprints, seeds and timing. Written
/// alongside every artifact. Timing fields differ between runs; the
/// artifacts themselves do not.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json resolved_config;
  std::map<std::string, std::string> input_hashes; // path -> fingerprint
  std::vector<std::uint64_t> seeds;
  std::string status = "ok";
  std::string error;
  double wall_clock_ms = 0.0;
  std::string started_at; // ISO-8601 UTC

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool"] = kToolName;
    j["version"] = kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = resolved_config;
    j["input_hashes"] = input_hashes;
    j["seeds"] = seeds;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["wall_clock_ms"] = wall_clock_ms;
    j["started_at"] = started_at;
    return j;
  }
};

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoFailure, "cannot write " + path.string());
  out << m.to_json().dump(2) << "\n";
}

} // namespace cca
