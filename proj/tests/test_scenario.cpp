#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "liesde/scenario.hpp"

using namespace liesde;
using namespace liesde::scenario;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small(const char* name, json overrides) {
  json cfg = json{{"scenario", name}};
  for (auto it = overrides.begin(); it != overrides.end(); ++it) cfg[it.key()] = it.value();
  return cfg;
}

void check_all_passed(const ScenarioResult& result, std::size_t expected_checks) {
  CHECK(result.checks.size() == expected_checks);
  for (const auto& c : result.checks) {
    INFO(c.name, ": ", c.statistic, " ", c.comparison, " ", c.threshold, " -- ", c.detail);
    CHECK(c.pass);
  }
  CHECK(result.pass());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / "liesde_scenario_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("scenario catalog lists six runnable scenarios") {
  const auto& infos = catalog();
  CHECK(infos.size() == 6);
  for (const auto& info : infos) {
    CHECK(known_scenario(info.name));
    json cfg = default_config(info.name);
    CHECK(cfg.at("scenario").get<std::string>() == info.name);
    CHECK(cfg.contains("seed"));
    CHECK(cfg.contains("checks"));
    CHECK(cfg.at("checks").is_array());
    CHECK(!cfg.at("checks").empty());
    CHECK(cfg.contains("tolerances"));
    CHECK(!info.summary.empty());
  }
  CHECK(!known_scenario("nope"));
  CHECK_THROWS_AS(default_config("nope"), ConfigError);
}

TEST_CASE("config validation rejects malformed input") {
  CHECK_THROWS_AS(run_scenario(json{{"scenario", "nope"}}), ConfigError);
  CHECK_THROWS_AS(run_scenario(json::array()), ConfigError);
  CHECK_THROWS_AS(run_scenario(json{{"scenario", 3}}), ConfigError);
  CHECK_THROWS_AS(run_scenario(json::object()), ConfigError);

  // Unknown keys are rejected at every level.
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"typo", 1}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"noise", {{"typo", 1}}}})),
                  ConfigError);
  CHECK_THROWS_WITH_AS(run_scenario(small("marcus_pushforward", {{"noise", {{"typo", 1}}}})),
                       doctest::Contains("noise.typo"), ConfigError);

  // Values must keep their JSON category.
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"paths", "ten"}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"noise", 3}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"paths", 2.5}})), ConfigError);

  // A scenario only accepts the noise family it was built around.
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"noise", {{"kind", "brownian"}}}})),
                  ConfigError);

  // Shared-key sanity.
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"seed", -1}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"paths", 0}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"step", 0.0}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"out", ""}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("bm_rotation_gauge", {{"law_times", {2.0}}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("bm_rotation_gauge", {{"law_times", json::array()}})),
                  ConfigError);

  // Check selection and tolerance overrides are validated by name.
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"checks", {"nope"}}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("marcus_pushforward", {{"checks", json::array()}})),
                  ConfigError);
  CHECK_THROWS_AS(
      run_scenario(small("marcus_pushforward", {{"tolerances", {{"nope", 1.0}}}})), ConfigError);
  CHECK_THROWS_AS(
      run_scenario(small("marcus_pushforward", {{"tolerances", {{"map-identity", "x"}}}})),
      ConfigError);

  // Scenario-specific structure.
  CHECK_THROWS_AS(run_scenario(small("iterated_map", {{"step", 0.5}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("iterated_map", {{"law_times", {1.5}}})), ConfigError);
  CHECK_THROWS_AS(
      run_scenario(small("alpha_stable_time", {{"noise", {{"alpha", 2.5}}}})), ConfigError);
  CHECK_THROWS_AS(run_scenario(small("alpha_stable_time", {{"law_times", {1.9}}})), ConfigError);
}

TEST_CASE("fnv1a hash matches published reference values") {
  // [TRIVIAL] standard 64-bit FNV-1a test vectors.
  CHECK(fnv1a(std::string("")) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a(std::string("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a(std::string("foobar")) == 0x85944171f73967e8ULL);
}

TEST_CASE("bm rotation scenario passes at reduced size") {
  json cfg = small("bm_rotation_gauge",
                   {{"paths", 1500},
                    {"step", 0.01},
                    {"paths_written", 1},
                    {"criterion", {{"mc_samples", 4000}}},
                    {"roundtrip", {{"paths", 400}, {"step", 0.03125}}}});
  ScenarioResult result = run_scenario(cfg);
  check_all_passed(result, 10);
  CHECK(result.noise_samples.size() == 1);
  CHECK(result.details.contains("gauge_law"));
  CHECK(result.details.contains("roundtrip"));
  CHECK(result.seeds.at("master").get<std::uint64_t>() == 901);
}

TEST_CASE("alpha stable time scenario passes at reduced size") {
  json cfg = small("alpha_stable_time",
                   {{"paths", 1200}, {"step", 0.005}, {"criterion", {{"mc_samples", 4000}}}});
  ScenarioResult result = run_scenario(cfg);
  check_all_passed(result, 6);
  CHECK(result.details.contains("bm_time_law"));
  CHECK(result.details.contains("stable_scaling"));
}

TEST_CASE("marcus pushforward scenario passes at default size") {
  ScenarioResult result = run_scenario(json{{"scenario", "marcus_pushforward"}});
  check_all_passed(result, 2);
  CHECK(result.noise_samples.size() == 2);
  CHECK(result.state_samples.size() == 4);
}

TEST_CASE("nonmarkov gauge scenario passes at reduced size") {
  json cfg = small("nonmarkov_gauge", {{"paths", 10000}, {"step", 0.01}});
  ScenarioResult result = run_scenario(cfg);
  check_all_passed(result, 3);
}

TEST_CASE("iterated map scenario passes at reduced size") {
  json cfg = small("iterated_map", {{"paths", 6000}});
  ScenarioResult result = run_scenario(cfg);
  check_all_passed(result, 3);
}

TEST_CASE("affine example scenario passes at reduced size") {
  json cfg = small("affine_gl2_example",
                   {{"paths", 40}, {"cir", {{"paths", 2500}, {"step", 0.01}}}});
  ScenarioResult result = run_scenario(cfg);
  check_all_passed(result, 12);
  CHECK(result.details.contains("reduction"));
  CHECK(result.details.contains("cir_mean"));
  // Radial sample paths are emitted next to the plane paths.
  bool has_radial = false;
  for (const auto& [label, path] : result.state_samples)
    if (label.rfind("radial_state_", 0) == 0) {
      has_radial = true;
      CHECK(path.states.front().size() == 1);
    }
  CHECK(has_radial);
}

TEST_CASE("check subsets and tolerance overrides are honored") {
  json cfg = small("bm_rotation_gauge",
                   {{"paths", 600},
                    {"step", 0.01},
                    {"checks", {"gauge-law-marginals"}},
                    {"tolerances", {{"gauge-law-marginals", 1.1}}}});
  ScenarioResult result = run_scenario(cfg);
  REQUIRE(result.checks.size() == 1);
  CHECK(result.checks[0].name == "gauge-law-marginals");
  CHECK(result.checks[0].threshold == 1.1);
  // No adjusted p-value can reach 1.1, so the override must flip the verdict.
  CHECK(!result.checks[0].pass);
  CHECK(!result.pass());
}

TEST_CASE("artifacts are deterministic and hashed") {
  TempDir tmp;
  json cfg = small("marcus_pushforward", {{"paths", 4}, {"out", (tmp.dir / "runs").string()}});
  ScenarioResult first = run_scenario(cfg);
  ScenarioResult second = run_scenario(cfg);

  RunArtifacts a = write_artifacts(first, cfg.at("out").get<std::string>(), "a");
  RunArtifacts b = write_artifacts(second, cfg.at("out").get<std::string>(), "b");
  CHECK(a.directory != b.directory);
  REQUIRE(!a.files.empty());
  CHECK(a.files.size() == b.files.size());

  // Reruns with the same config are byte-identical, including the manifest.
  CHECK(slurp(a.manifest_file) == slurp(b.manifest_file));
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    CHECK(a.files[i].file == b.files[i].file);
    CHECK(a.files[i].hash == b.files[i].hash);
    std::string content = slurp(fs::path(a.directory) / a.files[i].file);
    CHECK(content.size() == a.files[i].bytes);
    char expected[17];
    std::snprintf(expected, sizeof expected, "%016llx",
                  static_cast<unsigned long long>(fnv1a(content)));
    CHECK(a.files[i].hash == expected);
  }

  // Report shape: one record per check plus the seed table.
  json report = json::parse(slurp(fs::path(a.directory) / "reports" / "report.json"));
  CHECK(report.at("scenario") == "marcus_pushforward");
  CHECK(report.at("pass").is_boolean());
  REQUIRE(report.at("checks").is_array());
  CHECK(report.at("checks").size() == first.checks.size());
  for (const auto& c : report.at("checks")) {
    CHECK(c.contains("name"));
    CHECK(c.contains("pass"));
    CHECK(c.contains("statistic"));
    CHECK(c.contains("threshold"));
  }
  CHECK(report.at("seeds").at("master").get<int>() == 903);

  json manifest = json::parse(slurp(a.manifest_file));
  CHECK(manifest.at("format") == 1);
  CHECK(manifest.at("config").at("paths") == 4);
  CHECK(manifest.at("artifacts").size() == a.files.size());

  // CSV sanity: sample paths start with a time column.
  std::string csv = slurp(fs::path(a.directory) / a.files[0].file);
  CHECK(csv.rfind("time", 0) == 0);
}

TEST_CASE("failed validation leaves no artifacts behind") {
  TempDir tmp;
  json cfg = small("marcus_pushforward",
                   {{"paths", 4}, {"typo", true}, {"out", (tmp.dir / "runs").string()}});
  CHECK_THROWS_AS(run_scenario(cfg), ConfigError);
  CHECK(!fs::exists(tmp.dir / "runs"));
}
