#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dgsan::cli {

enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kConfigError = 2,
  kNumericDivergence = 3,
};

/// Entry point shared by the `dgsan` binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// verify

struct CheckRecord {
  std::string theorem;
  std::string f_name;
  int dim = 0;
  std::uint64_t seed = 0;
  double residual_or_delta = 0.0;
  bool pass = false;
};

std::string to_json_line(const CheckRecord& r);

struct SuiteSummary {
  std::string suite;
  std::size_t checks = 0;
  std::size_t failures = 0;
  std::optional<CheckRecord> worst;
  std::optional<CheckRecord> first_failure;
  bool pass() const { return checks > 0 && failures == 0; }
};

const std::vector<std::string>& verify_suites();

/// Runs one suite over `trials` random instances of dimension `dim`. Each
/// check's seed reproduces its instance on its own.
SuiteSummary run_verify_suite(const std::string& suite, int trials, std::uint64_t seed, int dim,
                              const std::function<void(const CheckRecord&)>& sink = {});

// ---------------------------------------------------------------------------
// manifest

/// SHA-1 of "blob <size>\0" + contents, as git hashes file objects.
std::string git_blob_sha1(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::filesystem::path> artifacts;
  std::vector<std::filesystem::path> inputs;

  nlohmann::ordered_json to_json() const;
  /// Throws std::runtime_error if any listed artifact is missing.
  void write(const std::filesystem::path& path) const;
};

/// UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace dgsan::cli
