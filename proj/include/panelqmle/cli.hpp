#pragma once

#include <exception>
#include <string>
#include <vector>

#include <json.hpp>

namespace panelqmle {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonConvergence = 3;
inline constexpr int kExitDegenerate = 4;

const char* tool_version();

// 2 for InvalidInput (including config errors), 3 for ConvergenceFailure, 4 for
// NumericDegeneracy, 1 otherwise.
int exit_code_for(const std::exception& e);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

struct ArtifactEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  std::string command;
  std::string config_path;
  nlohmann::json config;  // parsed config, or null
  std::string data_path;
  std::string output_dir;
  unsigned long long seed = 0;
  std::string seed_source;  // config, env, flag or none
  int jobs = 1;
  int reps = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<ArtifactEntry> artifacts;

  nlohmann::json to_json() const;
};

// Entry point behind tools/panelqmle. Subcommands: simulate, estimate, mc, bound, lr-check,
// compare-fe. Writes reports plus manifest.json into --out; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace panelqmle
