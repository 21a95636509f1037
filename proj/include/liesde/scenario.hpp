#pragma once

// Config-driven scenario runner: binds noise sampling, SDE solving, the
// transformation calculus and the statistical checks into named, reproducible
// experiments with file artifacts.
//
// A scenario is selected by config["scenario"]; every other key has a
// default that `default_config` exposes, so a config file only needs the keys
// it overrides. `run_scenario` validates the whole config before doing any
// work and produces an in-memory result; `write_artifacts` lays the result
// out on disk as out/<scenario>/<stamp>/{paths/,reports/,manifest.json}.
// Artifact bytes depend only on the resolved config, so reruns with an
// identical config hash identically.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "liesde/path.hpp"
#include "liesde/sde.hpp"

namespace liesde::scenario {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One named check: `pass` is `statistic <cmp> threshold` with the comparison
// recorded so reports stay self-describing (some checks are negative
// controls whose statistic must exceed the threshold).
struct CheckResult {
  std::string name;
  bool pass = false;
  double statistic = 0;
  double threshold = 0;
  std::string comparison = "<=";
  std::string detail;
};

struct ScenarioResult {
  std::string scenario;
  nlohmann::json config;  // fully-resolved echo
  nlohmann::json seeds;   // master seed plus the derived per-purpose seeds
  std::vector<CheckResult> checks;
  // Representative paths written to paths/ as CSV, keyed by file stem.
  std::vector<std::pair<std::string, SemimartingalePath>> noise_samples;
  std::vector<std::pair<std::string, SolutionPath>> state_samples;
  // Auxiliary reports (law tests, invariance reports, estimates) keyed by name.
  nlohmann::json details = nlohmann::json::object();

  bool pass() const;
};

struct ScenarioInfo {
  std::string name;
  std::string summary;
};

const std::vector<ScenarioInfo>& catalog();
bool known_scenario(const std::string& name);

// Fully-populated default config for one scenario; throws ConfigError for an
// unknown name.
nlohmann::json default_config(const std::string& name);

// Merges the user config over the scenario defaults, validates every key
// (catalog names, step > 0, paths >= 1, known check names) and runs the
// scenario. Throws ConfigError on invalid input without side effects.
ScenarioResult run_scenario(const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const void* data, std::size_t size);
std::uint64_t fnv1a(const std::string& text);

struct ArtifactSummary {
  std::string file;  // path relative to the run directory
  std::string hash;  // fnv1a-64 of the bytes, hex
  std::size_t bytes = 0;
};

struct RunArtifacts {
  std::string directory;  // <out_root>/<scenario>/<stamp>
  std::vector<ArtifactSummary> files;
  std::string manifest_file;
};

// Writes paths/, reports/ and manifest.json. An empty `stamp` uses the
// current UTC time (with a numeric suffix on collision); passing a stamp
// makes the layout fully deterministic for tests.
RunArtifacts write_artifacts(const ScenarioResult& result, const std::string& out_root,
                             std::string stamp = "");

nlohmann::json to_json(const CheckResult& check);
// The stable report shape: {scenario, checks:[{name, pass, statistic,
// threshold, ...}], seeds}.
nlohmann::json report_json(const ScenarioResult& result);
// Manifest content: config echo, versions, seeds, per-artifact hashes. The
// stamp is deliberately excluded so rerun manifests compare bitwise.
nlohmann::json manifest_json(const ScenarioResult& result,
                             const std::vector<ArtifactSummary>& artifacts);

}  // namespace liesde::scenario
