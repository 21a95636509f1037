#include "liesde/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "liesde/characteristics.hpp"
#include "liesde/noise.hpp"
#include "liesde/stats.hpp"
#include "liesde/symmetry.hpp"
#include "liesde/transform.hpp"

namespace liesde::scenario {

using nlohmann::json;

namespace {

constexpr const char* kLibraryVersion = "0.1.0";
constexpr int kManifestFormat = 1;

[[noreturn]] void fail(const std::string& message) { throw ConfigError(message); }

Vec vec1(double a) {
  Vec v(1);
  v[0] = a;
  return v;
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// Deterministic sub-seed for (purpose stream, path index) pairs so every
// ensemble is reproducible regardless of scheduling order.
std::uint64_t sub_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  return mix64(master + 0x9E3779B97F4A7C15ULL * (stream + 1)) ^
         mix64(0xBF58476D1CE4E5B9ULL * (index + 1) + stream);
}

// Index-parallel loop; the body must only touch its own slot. The first
// exception wins and is rethrown on the caller thread.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = std::min<std::size_t>(count, hw ? hw : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// Restriction of a continuous path on an additive chart to {t0} + times;
// keeps the exact node values so marginal laws are untouched.
SemimartingalePath decimate_to(const SemimartingalePath& path, const std::vector<double>& times) {
  if (!path.chart || !path.chart->additive)
    throw std::logic_error("decimation requires an additive chart");
  if (!path.jumps.empty()) throw std::logic_error("decimation requires a continuous path");
  SemimartingalePath out;
  out.chart = path.chart;
  out.grid.push_back(path.grid.front());
  out.values.push_back(path.values.front());
  for (double t : times) {
    if (t <= out.grid.back()) continue;
    Vec v = path_value_at(path, t);
    out.cont_increments.push_back(v - out.values.back());
    out.grid.push_back(t);
    out.values.push_back(v);
  }
  return out;
}

double rel_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

// Sup distance between two binned jump measures (shape mismatch -> infinity).
double histogram_gap(const JumpHistogram& a, const JumpHistogram& b) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (a.time_edges.size() != b.time_edges.size() || a.marginals.size() != b.marginals.size())
    return inf;
  double gap = rel_gap(a.total_mass, b.total_mass);
  for (std::size_t e = 0; e < a.time_edges.size(); ++e)
    gap = std::max(gap, std::abs(a.time_edges[e] - b.time_edges[e]));
  for (std::size_t t = 0; t < a.marginals.size(); ++t) {
    if (a.marginals[t].size() != b.marginals[t].size()) return inf;
    for (std::size_t ax = 0; ax < a.marginals[t].size(); ++ax) {
      const Histogram& ha = a.marginals[t][ax];
      const Histogram& hb = b.marginals[t][ax];
      if (ha.counts.size() != hb.counts.size()) return inf;
      gap = std::max(gap, std::abs(ha.lower - hb.lower));
      gap = std::max(gap, std::abs(ha.upper - hb.upper));
      for (std::size_t c = 0; c < ha.counts.size(); ++c)
        gap = std::max(gap, std::abs(ha.counts[c] - hb.counts[c]));
    }
  }
  return gap;
}

struct InvarianceStats {
  double max_drift = 0;
  double max_diffusion = 0;
  double min_nu_p = 1;
  double max_intensity_se = 0;
};

InvarianceStats stats_of(const InvarianceReport& report) {
  InvarianceStats s;
  for (const auto& sample : report.samples) {
    s.max_drift = std::max(s.max_drift, sample.drift_residual);
    s.max_diffusion = std::max(s.max_diffusion, sample.diffusion_residual);
    s.min_nu_p = std::min(s.min_nu_p, sample.nu_worst_p);
    s.max_intensity_se = std::max(s.max_intensity_se, std::abs(sample.intensity_deviation_se));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Check selection and registration
// ---------------------------------------------------------------------------

class CheckSet {
 public:
  explicit CheckSet(const json& cfg) : tolerances_(cfg.at("tolerances")) {
    for (const auto& c : cfg.at("checks")) selected_.push_back(c.get<std::string>());
  }

  bool wants(const std::string& name) const {
    return std::find(selected_.begin(), selected_.end(), name) != selected_.end();
  }

  bool wants_any(std::initializer_list<const char*> names) const {
    for (const char* n : names)
      if (wants(n)) return true;
    return false;
  }

  void add(ScenarioResult& out, const std::string& name, double statistic,
           double default_threshold, const std::string& comparison, const std::string& detail) {
    if (!wants(name)) return;
    double threshold = default_threshold;
    if (tolerances_.contains(name)) threshold = tolerances_.at(name).get<double>();
    bool pass = false;
    if (comparison == "<=")
      pass = statistic <= threshold;
    else if (comparison == "<")
      pass = statistic < threshold;
    else if (comparison == ">=")
      pass = statistic >= threshold;
    else if (comparison == ">")
      pass = statistic > threshold;
    else
      throw std::logic_error("unknown comparison " + comparison);
    out.checks.push_back(CheckResult{name, pass, statistic, threshold, comparison, detail});
  }

 private:
  std::vector<std::string> selected_;
  json tolerances_;
};

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

// Recursive merge of the user config over the defaults. Unknown keys are
// rejected (except inside "tolerances", a free map validated later) and every
// value must keep the JSON category of its default.
json merge_config(const json& defaults, const json& user, const std::string& where) {
  json out = defaults;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string& key = it.key();
    std::string here = where.empty() ? key : where + "." + key;
    if (!defaults.contains(key)) fail("unknown config key \"" + here + "\"");
    const json& dv = defaults.at(key);
    const json& uv = it.value();
    if (dv.is_object() && key == "tolerances") {
      if (!uv.is_object()) fail("\"" + here + "\" must be an object");
      out[key] = uv;
    } else if (dv.is_object()) {
      if (!uv.is_object()) fail("\"" + here + "\" must be an object");
      out[key] = merge_config(dv, uv, here);
    } else if (dv.is_array()) {
      if (!uv.is_array()) fail("\"" + here + "\" must be an array");
      out[key] = uv;
    } else if (dv.is_string()) {
      if (!uv.is_string()) fail("\"" + here + "\" must be a string");
      out[key] = uv;
    } else if (dv.is_boolean()) {
      if (!uv.is_boolean()) fail("\"" + here + "\" must be a boolean");
      out[key] = uv;
    } else if (dv.is_number()) {
      if (!uv.is_number()) fail("\"" + here + "\" must be a number");
      out[key] = uv;
    } else {
      out[key] = uv;
    }
  }
  return out;
}

double positive_number(const json& cfg, const std::string& table, const std::string& key) {
  double v = cfg.at(table).at(key).get<double>();
  if (!(v > 0) || !std::isfinite(v)) fail("\"" + table + "." + key + "\" must be positive");
  return v;
}

long positive_count(const json& cfg, const std::string& table, const std::string& key,
                    long minimum = 1) {
  const json& v = cfg.at(table).at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    fail("\"" + table + "." + key + "\" must be an integer");
  long n = v.get<long>();
  if (n < minimum)
    fail("\"" + table + "." + key + "\" must be at least " + std::to_string(minimum));
  return n;
}

void expect_kind(const json& cfg, const std::string& table, const std::string& expected) {
  std::string kind = cfg.at(table).at("kind").get<std::string>();
  if (kind != expected)
    fail("scenario \"" + cfg.at("scenario").get<std::string>() + "\" supports " + table +
         ".kind = \"" + expected + "\", got \"" + kind + "\"");
}

std::vector<double> law_times_of(const json& cfg) {
  std::vector<double> times;
  double horizon = cfg.at("horizon").get<double>();
  for (const auto& t : cfg.at("law_times")) {
    double v = t.get<double>();
    if (!(v > 0) || v > horizon) fail("\"law_times\" entries must lie in (0, horizon]");
    if (!times.empty() && v <= times.back()) fail("\"law_times\" must be strictly increasing");
    times.push_back(v);
  }
  if (times.empty()) fail("\"law_times\" must not be empty");
  return times;
}

struct CommonConfig {
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  double step = 0;
  double horizon = 0;
  std::size_t paths_written = 0;
};

CommonConfig common_of(const json& cfg) {
  CommonConfig c;
  const json& seed = cfg.at("seed");
  if ((!seed.is_number_integer() && !seed.is_number_unsigned()) ||
      (seed.is_number_integer() && seed.get<long long>() < 0))
    fail("\"seed\" must be a nonnegative integer");
  c.seed = seed.get<std::uint64_t>();
  const json& paths = cfg.at("paths");
  if (!paths.is_number_integer() && !paths.is_number_unsigned())
    fail("\"paths\" must be an integer");
  long p = paths.get<long>();
  if (p < 1 || p > 100000000) fail("\"paths\" must be between 1 and 1e8");
  c.paths = static_cast<std::size_t>(p);
  c.step = cfg.at("step").get<double>();
  if (!(c.step > 0) || !std::isfinite(c.step)) fail("\"step\" must be positive");
  c.horizon = cfg.at("horizon").get<double>();
  if (!(c.horizon >= c.step) || !std::isfinite(c.horizon))
    fail("\"horizon\" must be at least one step");
  const json& pw = cfg.at("paths_written");
  if (!pw.is_number_integer() && !pw.is_number_unsigned())
    fail("\"paths_written\" must be an integer");
  long w = pw.get<long>();
  if (w < 0) fail("\"paths_written\" must be nonnegative");
  c.paths_written = std::min<std::size_t>(static_cast<std::size_t>(w), c.paths);
  if (!cfg.at("out").is_string() || cfg.at("out").get<std::string>().empty())
    fail("\"out\" must be a nonempty string");
  return c;
}

void validate_checks(const json& cfg, const json& defaults) {
  std::vector<std::string> known;
  for (const auto& c : defaults.at("checks")) known.push_back(c.get<std::string>());
  const json& checks = cfg.at("checks");
  if (!checks.is_array() || checks.empty()) fail("\"checks\" must be a nonempty array");
  std::vector<std::string> seen;
  for (const auto& c : checks) {
    if (!c.is_string()) fail("\"checks\" entries must be strings");
    std::string name = c.get<std::string>();
    if (std::find(known.begin(), known.end(), name) == known.end())
      fail("unknown check \"" + name + "\" for scenario \"" +
           cfg.at("scenario").get<std::string>() + "\"");
    if (std::find(seen.begin(), seen.end(), name) != seen.end())
      fail("duplicate check \"" + name + "\"");
    seen.push_back(name);
  }
  const json& tol = cfg.at("tolerances");
  if (!tol.is_object()) fail("\"tolerances\" must be an object");
  for (auto it = tol.begin(); it != tol.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      fail("tolerance for unknown check \"" + it.key() + "\"");
    if (!it.value().is_number() || !std::isfinite(it.value().get<double>()))
      fail("tolerance \"" + it.key() + "\" must be a finite number");
  }
}

// ---------------------------------------------------------------------------
// Shared constructions
// ---------------------------------------------------------------------------

// Rotation of two coordinates of R^dim, acting trivially on the rest.
GaugeAction pair_rotation_action(int i, int j, int dim) {
  GaugeAction a;
  a.group = &shared_so2_chart();
  a.noise = &shared_additive_chart(dim);
  a.xi = [i, j](const Vec& g, const Vec& z) {
    Mat r = rot2(g[0]);
    Vec out = z;
    out[i] = r(0, 0) * z[i] + r(0, 1) * z[j];
    out[j] = r(1, 0) * z[i] + r(1, 1) * z[j];
    return out;
  };
  a.generators = 1;
  a.generator = [i, j, dim](int, const Vec& z) {
    Vec k = Vec::Zero(dim);
    k[i] = -z[j];
    k[j] = z[i];
    return k;
  };
  a.upsilon = [i, j, dim](const Vec& g) {
    Mat u = Mat::Identity(dim, dim);
    Mat r = rot2(g[0]);
    u(i, i) = r(0, 0);
    u(i, j) = r(0, 1);
    u(j, i) = r(1, 0);
    u(j, j) = r(1, 1);
    return u;
  };
  a.automorphism = true;
  a.isometric_log = true;
  return a;
}

// Affine action of GL(2) x R^2 on the plane: one increment moves x to M x + v.
CanonicalSdeMap affine_plane_sde() {
  CanonicalSdeMap sde;
  sde.state_dim = 2;
  sde.noise_chart = &shared_gl_rm_chart(2, 2);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec&) {
    Mat m(2, 2);
    m << dz[0], dz[1], dz[2], dz[3];
    return Vec(m * x + dz.tail(2));
  };
  return sde;
}

SdeJacobians affine_plane_jacobians() {
  SdeJacobians jac;
  jac.d_state = [](const Vec&, const Vec& dz, const Vec&) {
    Mat m(2, 2);
    m << dz[0], dz[1], dz[2], dz[3];
    return m;
  };
  jac.d_noise = [](const Vec& x, const Vec&, const Vec&) {
    Mat d = Mat::Zero(2, 6);
    d(0, 0) = x[0];
    d(0, 1) = x[1];
    d(1, 2) = x[0];
    d(1, 3) = x[1];
    d(0, 4) = 1;
    d(1, 5) = 1;
    return d;
  };
  return jac;
}

// Generator of the simultaneous rotation of state and noise: Y = (-x2, x1),
// C = 1 in the one-dimensional rotation algebra.
InfinitesimalTransformation plane_rotation_generator() {
  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(-x[1], x[0]); };
  v.c = [](const Vec&) { return vec1(1.0); };
  return v;
}

double angle_of(const Vec& x) { return std::atan2(x[1], x[0]); }

}  // namespace

// ---------------------------------------------------------------------------
// Scenario: history-dependent rotations of planar Brownian noise
// ---------------------------------------------------------------------------

namespace {

json bm_rotation_gauge_defaults() {
  return json{
      {"scenario", "bm_rotation_gauge"},
      {"seed", 901},
      {"paths", 10000},
      {"step", 0.001},
      {"horizon", 1.0},
      {"paths_written", 2},
      {"out", "out"},
      {"law_times", {0.5, 1.0}},
      {"noise", {{"kind", "brownian"}, {"dim", 2}}},
      {"sde", {{"kind", "noise-only"}}},
      {"transformation", {{"kind", "rotation-control"}, {"gains", {1.2, -0.8}}}},
      {"criterion",
       {{"intensity", 2.0},
        {"radius_low", 0.3},
        {"radius_high", 0.6},
        {"angles", {0.4, 1.1, 2.2}},
        {"rejected_angle", 1.5707963267948966},
        {"mc_samples", 20000}}},
      {"roundtrip",
       {{"paths", 10000},
        {"step", 0.015625},
        {"angle", 0.6283185307179586},
        {"intensity", 1.5},
        {"drift", {0.3, -0.2}},
        {"diffusion", {1.0, 0.25}},
        {"cone_half_angle", 0.5},
        {"radius_low", 0.3},
        {"radius_high", 0.6}}},
      {"checks",
       {"gauge-law-marginals", "gauge-law-covariance", "cp-gauge-drift", "cp-gauge-diffusion",
        "cp-gauge-jump-shape", "cp-gauge-jump-intensity", "cp-gauge-axis-rejected",
        "roundtrip-drift", "roundtrip-diffusion", "roundtrip-jumps"}},
      {"tolerances", json::object()},
  };
}

void run_bm_rotation_gauge(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "brownian");
  expect_kind(cfg, "sde", "noise-only");
  expect_kind(cfg, "transformation", "rotation-control");
  if (positive_count(cfg, "noise", "dim") != 2) fail("\"noise.dim\" must be 2 for rotations");
  std::vector<double> law_times = law_times_of(cfg);
  const json& gains_json = cfg.at("transformation").at("gains");
  if (!gains_json.is_array() || gains_json.size() != 2)
    fail("\"transformation.gains\" must hold two numbers");
  double gain1 = gains_json[0].get<double>(), gain2 = gains_json[1].get<double>();
  double cr_intensity = positive_number(cfg, "criterion", "intensity");
  double cr_lo = positive_number(cfg, "criterion", "radius_low");
  double cr_hi = positive_number(cfg, "criterion", "radius_high");
  if (!(cr_lo < cr_hi)) fail("\"criterion.radius_low\" must be below radius_high");
  if (cfg.at("criterion").at("angles").empty()) fail("\"criterion.angles\" must not be empty");
  int cr_mc = static_cast<int>(positive_count(cfg, "criterion", "mc_samples", 1000));
  double rejected_angle = cfg.at("criterion").at("rejected_angle").get<double>();
  long rt_paths = positive_count(cfg, "roundtrip", "paths", 100);
  double rt_step = positive_number(cfg, "roundtrip", "step");
  double rt_angle = cfg.at("roundtrip").at("angle").get<double>();
  double rt_intensity = positive_number(cfg, "roundtrip", "intensity");
  double rt_cone = positive_number(cfg, "roundtrip", "cone_half_angle");
  double rt_lo = positive_number(cfg, "roundtrip", "radius_low");
  double rt_hi = positive_number(cfg, "roundtrip", "radius_high");
  if (!(rt_lo < rt_hi)) fail("\"roundtrip.radius_low\" must be below radius_high");
  const json& rt_drift = cfg.at("roundtrip").at("drift");
  const json& rt_diff = cfg.at("roundtrip").at("diffusion");
  if (rt_drift.size() != 2 || rt_diff.size() != 2)
    fail("\"roundtrip.drift\" and \"roundtrip.diffusion\" must hold two numbers");

  CheckSet checks(cfg);
  const GaugeAction action = rotation_gauge_action_r2();
  out.seeds["streams"] = {{"law_transformed", 1}, {"law_reference", 2},   {"criterion", 3},
                          {"criterion_axis", 4},  {"roundtrip_hunt", 5},  {"roundtrip_paths", 6}};

  // --- law equality of the rotated noise against fresh noise -------------
  if (checks.wants_any({"gauge-law-marginals", "gauge-law-covariance"})) {
    std::vector<SemimartingalePath> moved(c.paths), fresh(c.paths);
    std::vector<SemimartingalePath> kept(c.paths_written);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath w = sample_brownian(2, c.horizon, c.step, sub_seed(c.seed, 1, i));
      PredictableControl control{[gain1, gain2](const PathView& v) {
        return vec1(gain1 * v.value()[0] + gain2 * v.value()[1]);
      }};
      SemimartingalePath m = apply_gauge_to_noise(w, action, control);
      if (i < kept.size()) kept[i] = m;
      moved[i] = decimate_to(m, law_times);
      fresh[i] =
          decimate_to(sample_brownian(2, c.horizon, c.step, sub_seed(c.seed, 2, i)), law_times);
    });
    for (std::size_t i = 0; i < kept.size(); ++i)
      out.noise_samples.emplace_back("rotated_brownian_" + std::to_string(i), std::move(kept[i]));
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(moved, fresh, lc);
    out.details["gauge_law"] = to_json(rep);
    checks.add(out, "gauge-law-marginals", rep.worst_p_adjusted, 0.01, ">=", rep.summary());
    checks.add(out, "gauge-law-covariance", rep.max_cov_deviation_se, 5.0, "<",
               "max covariance deviation in SE units");
  }

  // --- triplet criterion: isotropic jumps pass, axis-supported jumps fail -
  if (checks.wants_any({"cp-gauge-drift", "cp-gauge-diffusion", "cp-gauge-jump-shape",
                        "cp-gauge-jump-intensity", "cp-gauge-axis-rejected"})) {
    LevyTriplet iso;
    iso.chart = &shared_additive_chart(2);
    iso.b0 = Vec::Zero(2);
    iso.A0 = Mat::Identity(2, 2);
    iso.jump_intensity = cr_intensity;
    iso.jump_sampler = [cr_lo, cr_hi](Rng& rng) {
      double phi = rng.uniform(0, 2 * M_PI);
      double rho = std::sqrt(rng.uniform(cr_lo * cr_lo, cr_hi * cr_hi));
      return vec2(rho * std::cos(phi), rho * std::sin(phi));
    };
    iso.hunt_mean = Vec::Zero(2);
    std::vector<Vec> gs;
    for (const auto& a : cfg.at("criterion").at("angles")) gs.push_back(vec1(a.get<double>()));
    InvarianceOptions opt;
    opt.mc_samples = cr_mc;
    opt.seed = sub_seed(c.seed, 3);
    InvarianceReport rep = levy_gauge_check(iso, action, gs, opt);
    InvarianceStats st = stats_of(rep);
    out.details["cp_gauge"] = to_json(rep);
    checks.add(out, "cp-gauge-drift", st.max_drift, 1e-6, "<=",
               "drift condition residual, max over angles");
    checks.add(out, "cp-gauge-diffusion", st.max_diffusion, 1e-6, "<=",
               "diffusion condition residual, max over angles");
    checks.add(out, "cp-gauge-jump-shape", st.min_nu_p, 0.01, ">=",
               "worst adjusted p of the jump-law comparison");
    checks.add(out, "cp-gauge-jump-intensity", st.max_intensity_se, 5.0, "<",
               "jump intensity deviation in SE units");

    if (checks.wants("cp-gauge-axis-rejected")) {
      LevyTriplet axis = iso;
      axis.jump_sampler = [cr_lo, cr_hi](Rng& rng) {
        double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
        return vec2(sign * rng.uniform(cr_lo, cr_hi), 0.0);
      };
      axis.hunt_mean = Vec::Zero(2);
      InvarianceOptions axis_opt = opt;
      axis_opt.seed = sub_seed(c.seed, 4);
      InvarianceReport neg = levy_gauge_check(axis, action, {vec1(rejected_angle)}, axis_opt);
      out.details["cp_gauge_axis"] = to_json(neg);
      checks.add(out, "cp-gauge-axis-rejected", stats_of(neg).min_nu_p, 0.01, "<",
                 "axis-supported jump law must fail the jump-shape condition");
    }
  }

  // --- estimate-then-transform vs transform-then-estimate ----------------
  if (checks.wants_any({"roundtrip-drift", "roundtrip-diffusion", "roundtrip-jumps"})) {
    LevyTriplet tri;
    tri.chart = &shared_additive_chart(2);
    tri.b0 = vec2(rt_drift[0].get<double>(), rt_drift[1].get<double>());
    tri.A0 = Mat::Zero(2, 2);
    tri.A0(0, 0) = rt_diff[0].get<double>();
    tri.A0(1, 1) = rt_diff[1].get<double>();
    tri.jump_intensity = rt_intensity;
    tri.jump_sampler = [rt_cone, rt_lo, rt_hi](Rng& rng) {
      double phi = rng.uniform(-rt_cone, rt_cone);
      double rho = rng.uniform(rt_lo, rt_hi);
      return vec2(rho * std::cos(phi), rho * std::sin(phi));
    };
    tri.hunt_mean = hunt_mean_mc(tri, sub_seed(c.seed, 5));

    std::vector<SemimartingalePath> sample(static_cast<std::size_t>(rt_paths));
    std::vector<SemimartingalePath> moved(sample.size());
    Vec g = vec1(rt_angle);
    parallel_for(sample.size(), [&](std::size_t i) {
      sample[i] = sample_levy(tri, 1.0, rt_step, sub_seed(c.seed, 6, i));
      PredictableControl const_control{[g](const PathView&) { return g; }};
      moved[i] = apply_gauge_to_noise(sample[i], action, const_control);
    });
    EstimateOptions eopt;
    CharacteristicsEstimate base = estimate_characteristics(sample, eopt);
    CharacteristicsEstimate direct = estimate_characteristics(moved, eopt);
    CharacteristicsEstimate lifted = transformed_characteristics(base, action, g, eopt);

    double drift_stat = 0, diff_stat = 0;
    for (std::size_t j = 0; j < direct.times.size(); ++j) {
      for (Eigen::Index d = 0; d < direct.b_hat[j].size(); ++d) {
        double se = std::max(std::hypot(direct.b_se[j][d], lifted.b_se[j][d]), 1e-12);
        drift_stat = std::max(drift_stat, std::abs(direct.b_hat[j][d] - lifted.b_hat[j][d]) / se);
      }
      for (Eigen::Index r = 0; r < direct.a_hat[j].rows(); ++r)
        for (Eigen::Index s = 0; s < direct.a_hat[j].cols(); ++s) {
          double se = std::max(std::hypot(direct.a_se[j](r, s), lifted.a_se[j](r, s)), 1e-12);
          diff_stat =
              std::max(diff_stat, std::abs(direct.a_hat[j](r, s) - lifted.a_hat[j](r, s)) / se);
        }
    }
    double jump_stat = histogram_gap(direct.nu_hat, lifted.nu_hat);
    out.details["roundtrip"] = {{"direct", to_json(direct)},
                                {"lifted", to_json(lifted)},
                                {"drift_gap_se", drift_stat},
                                {"diffusion_gap_se", diff_stat},
                                {"jump_histogram_gap", jump_stat}};
    checks.add(out, "roundtrip-drift", drift_stat, 5.0, "<",
               "drift gap between the two estimation routes, SE units");
    checks.add(out, "roundtrip-diffusion", diff_stat, 5.0, "<",
               "diffusion gap between the two estimation routes, SE units");
    checks.add(out, "roundtrip-jumps", jump_stat, 1e-9, "<=",
               "binned jump measures of the two routes");
  }
}

// ---------------------------------------------------------------------------
// Scenario: time changes compensated by scaling
// ---------------------------------------------------------------------------

json alpha_stable_time_defaults() {
  return json{
      {"scenario", "alpha_stable_time"},
      {"seed", 902},
      {"paths", 10000},
      {"step", 0.001},
      {"horizon", 2.0},
      {"paths_written", 2},
      {"out", "out"},
      {"law_times", {0.5, 1.0}},
      {"noise", {{"kind", "truncated-stable"}, {"alpha", 1.0}, {"eps", 0.05}}},
      {"sde", {{"kind", "noise-only"}}},
      {"transformation",
       {{"kind", "time-scaling"}, {"eta_low", 0.5}, {"eta_high", 2.0}, {"rates", {2.0, 4.0}}}},
      {"criterion", {{"mc_samples", 20000}}},
      {"checks",
       {"bm-time-law-marginals", "bm-time-law-covariance", "bm-sqrt-diffusion", "stable-nu-shape",
        "stable-nu-intensity", "bm-linear-rejected"}},
      {"tolerances", json::object()},
  };
}

void run_alpha_stable_time(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "truncated-stable");
  expect_kind(cfg, "sde", "noise-only");
  expect_kind(cfg, "transformation", "time-scaling");
  double alpha = positive_number(cfg, "noise", "alpha");
  if (alpha >= 2.0) fail("\"noise.alpha\" must lie in (0, 2)");
  double eps = positive_number(cfg, "noise", "eps");
  double eta_low = positive_number(cfg, "transformation", "eta_low");
  double eta_high = positive_number(cfg, "transformation", "eta_high");
  if (!(eta_low < eta_high)) fail("\"transformation.eta_low\" must be below eta_high");
  std::vector<double> rates;
  for (const auto& r : cfg.at("transformation").at("rates")) {
    double v = r.get<double>();
    if (!(v > 0)) fail("\"transformation.rates\" must be positive");
    rates.push_back(v);
  }
  if (rates.empty()) fail("\"transformation.rates\" must not be empty");
  std::vector<double> law_times = law_times_of(cfg);
  if (law_times.back() > eta_low * c.horizon)
    fail("law times must stay below eta_low * horizon so the changed clock covers them");
  int mc = static_cast<int>(positive_count(cfg, "criterion", "mc_samples", 1000));

  CheckSet checks(cfg);
  out.seeds["streams"] = {{"law_transformed", 1},
                          {"law_reference", 2},
                          {"sqrt_criterion", 3},
                          {"stable_criterion", 4},
                          {"linear_criterion", 5}};

  // --- pathwise: eta-clock plus sqrt(eta) scaling preserves the BM law ----
  if (checks.wants_any({"bm-time-law-marginals", "bm-time-law-covariance"})) {
    const TimeAction bm_action = scaling_time_action(2.0, &shared_additive_chart(2));
    double mid = 0.5 * (eta_low + eta_high), amp = 0.5 * (eta_high - eta_low);
    std::vector<SemimartingalePath> moved(c.paths), fresh(c.paths);
    std::vector<SemimartingalePath> kept(c.paths_written);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath w = sample_brownian(2, c.horizon, c.step, sub_seed(c.seed, 1, i));
      PredictableControl density{[mid, amp](const PathView& v) {
        return vec1(mid + amp * std::tanh(v.value()[0]));
      }};
      SemimartingalePath scaled = apply_gamma_to_noise(w, bm_action, density, eta_low, eta_high);
      std::vector<double> eta_nodes(w.grid.size());
      for (std::size_t k = 0; k < w.grid.size(); ++k)
        eta_nodes[k] = mid + amp * std::tanh(w.values[k][0]);
      SemimartingalePath changed =
          apply_time_change(scaled, eta_nodes, eta_low, eta_high).path;
      if (i < kept.size()) kept[i] = changed;
      moved[i] = decimate_to(changed, law_times);
      fresh[i] =
          decimate_to(sample_brownian(2, c.horizon, c.step, sub_seed(c.seed, 2, i)), law_times);
    });
    for (std::size_t i = 0; i < kept.size(); ++i)
      out.noise_samples.emplace_back("time_changed_brownian_" + std::to_string(i),
                                     std::move(kept[i]));
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(moved, fresh, lc);
    out.details["bm_time_law"] = to_json(rep);
    checks.add(out, "bm-time-law-marginals", rep.worst_p_adjusted, 0.01, ">=", rep.summary());
    checks.add(out, "bm-time-law-covariance", rep.max_cov_deviation_se, 5.0, "<",
               "max covariance deviation in SE units");
  }

  // --- triplet criteria --------------------------------------------------
  if (checks.wants("bm-sqrt-diffusion")) {
    LevyTriplet bm;
    bm.chart = &shared_additive_chart(2);
    bm.b0 = Vec::Zero(2);
    bm.A0 = Mat::Identity(2, 2);
    InvarianceOptions opt;
    opt.mc_samples = mc;
    opt.seed = sub_seed(c.seed, 3);
    InvarianceReport rep =
        levy_time_check(bm, scaling_time_action(2.0, &shared_additive_chart(2)), rates, opt);
    out.details["bm_sqrt"] = to_json(rep);
    InvarianceStats st = stats_of(rep);
    checks.add(out, "bm-sqrt-diffusion", std::max(st.max_diffusion, st.max_drift), 1e-12, "<=",
               "diffusion and drift residuals of the sqrt scaling");
  }
  if (checks.wants_any({"stable-nu-shape", "stable-nu-intensity"})) {
    LevyTriplet stable;
    stable.chart = &shared_additive_chart(1);
    stable.b0 = Vec::Zero(1);
    stable.A0 = Mat::Zero(1, 1);
    stable.jump_intensity = alpha_stable_intensity(alpha, 1, false, eps);
    stable.jump_sampler = [eps, alpha](Rng& rng) {
      double rho = eps * std::pow(rng.uniform01(), -1.0 / alpha);
      return vec1((rng.uniform01() < 0.5 ? -1.0 : 1.0) * rho);
    };
    stable.hunt_mean = Vec::Zero(1);
    InvarianceOptions opt;
    opt.mc_samples = mc;
    opt.seed = sub_seed(c.seed, 4);
    InvarianceReport rep =
        levy_time_check(stable, scaling_time_action(alpha, &shared_additive_chart(1)), rates, opt);
    out.details["stable_scaling"] = to_json(rep);
    InvarianceStats st = stats_of(rep);
    checks.add(out, "stable-nu-shape", st.min_nu_p, 0.01, ">=",
               "worst adjusted p of the truncated-jump comparison above the cut");
    checks.add(out, "stable-nu-intensity", st.max_intensity_se, 5.0, "<",
               "survivor-rate deviation in SE units");
  }
  if (checks.wants("bm-linear-rejected")) {
    LevyTriplet bm;
    bm.chart = &shared_additive_chart(2);
    bm.b0 = Vec::Zero(2);
    bm.A0 = Mat::Identity(2, 2);
    InvarianceOptions opt;
    opt.mc_samples = mc;
    opt.seed = sub_seed(c.seed, 5);
    InvarianceReport rep =
        levy_time_check(bm, scaling_time_action(1.0, &shared_additive_chart(2)), rates, opt);
    out.details["bm_linear"] = to_json(rep);
    double min_diffusion = std::numeric_limits<double>::infinity();
    for (const auto& s : rep.samples) min_diffusion = std::min(min_diffusion, s.diffusion_residual);
    checks.add(out, "bm-linear-rejected", min_diffusion, 0.1, ">",
               "linear scaling must violate the diffusion condition at every rate");
  }
}

// ---------------------------------------------------------------------------
// Scenario: flow-type jump rule under a change of coordinates
// ---------------------------------------------------------------------------

json marcus_pushforward_defaults() {
  return json{
      {"scenario", "marcus_pushforward"},
      {"seed", 903},
      {"paths", 10},
      {"step", 0.005},
      {"horizon", 1.0},
      {"paths_written", 2},
      {"out", "out"},
      {"noise",
       {{"kind", "brownian-with-jumps"},
        {"diffusion", {0.16, 0.16}},
        {"jump_intensity", 2.0},
        {"jump_radius", 0.3}}},
      {"sde", {{"kind", "commuting-flows"}, {"flow_tol", 1e-9}, {"x0", {0.2, -0.3}}}},
      {"transformation", {{"kind", "exp-first-coordinate"}}},
      {"checks", {"pushforward-deviation", "map-identity"}},
      {"tolerances", json::object()},
  };
}

void run_marcus_pushforward(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "brownian-with-jumps");
  expect_kind(cfg, "sde", "commuting-flows");
  expect_kind(cfg, "transformation", "exp-first-coordinate");
  const json& diff = cfg.at("noise").at("diffusion");
  if (diff.size() != 2) fail("\"noise.diffusion\" must hold two numbers");
  double intensity = cfg.at("noise").at("jump_intensity").get<double>();
  if (intensity < 0) fail("\"noise.jump_intensity\" must be nonnegative");
  double radius = positive_number(cfg, "noise", "jump_radius");
  double flow_tol = positive_number(cfg, "sde", "flow_tol");
  const json& x0_json = cfg.at("sde").at("x0");
  if (x0_json.size() != 2) fail("\"sde.x0\" must hold two numbers");
  Vec x0 = vec2(x0_json[0].get<double>(), x0_json[1].get<double>());

  CheckSet checks(cfg);
  out.seeds["streams"] = {{"paths", 1}};

  // Source system: commuting fields (x1, 0) and (0, 1); the first coordinate
  // is mapped through exp, which turns x1 d/dx1 into y1 log(y1) d/dy1.
  MarcusSde source;
  source.state_dim = 2;
  source.flow_tol = flow_tol;
  source.fields = {[](const Vec& x) { return vec2(x[0], 0.0); },
                   [](const Vec&) { return vec2(0.0, 1.0); }};
  MarcusSde target;
  target.state_dim = 2;
  target.flow_tol = flow_tol;
  target.fields = {[](const Vec& y) { return vec2(y[0] > 0 ? y[0] * std::log(y[0]) : 0.0, 0.0); },
                   [](const Vec&) { return vec2(0.0, 1.0); }};
  CanonicalSdeMap source_map = source.as_canonical();
  CanonicalSdeMap target_map = target.as_canonical();
  target_map.state_domain = [](const Vec& y) { return y[0] > 0; };
  auto phi = [](const Vec& x) { return vec2(std::exp(x[0]), x[1]); };

  LevyTriplet tri;
  tri.chart = &shared_additive_chart(2);
  tri.b0 = Vec::Zero(2);
  tri.A0 = Mat::Zero(2, 2);
  tri.A0(0, 0) = diff[0].get<double>();
  tri.A0(1, 1) = diff[1].get<double>();
  tri.jump_intensity = intensity;
  tri.jump_sampler = [radius](Rng& rng) {
    double phi_angle = rng.uniform(0, 2 * M_PI);
    double rho = radius * std::sqrt(rng.uniform01());
    return vec2(rho * std::cos(phi_angle), rho * std::sin(phi_angle));
  };
  tri.hunt_mean = Vec::Zero(2);

  if (checks.wants("pushforward-deviation")) {
    std::vector<double> devs(c.paths, 0.0);
    std::vector<SemimartingalePath> kept_noise(c.paths_written);
    std::vector<SolutionPath> kept_source(c.paths_written), kept_target(c.paths_written);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath z = sample_levy(tri, c.horizon, c.step, sub_seed(c.seed, 1, i));
      SolutionPath x = solve_increment_map(source_map, z, x0);
      SolutionPath y = solve_increment_map(target_map, z, phi(x0));
      if (x.exploded || y.exploded) {
        devs[i] = std::numeric_limits<double>::infinity();
        return;
      }
      double dev = 0;
      for (std::size_t k = 0; k < x.grid.size(); ++k)
        dev = std::max(dev, (phi(x.states[k]) - y.states[k]).lpNorm<Eigen::Infinity>());
      devs[i] = dev;
      if (i < kept_noise.size()) {
        kept_noise[i] = z;
        kept_source[i] = x;
        kept_target[i] = y;
      }
    });
    for (std::size_t i = 0; i < kept_noise.size(); ++i) {
      out.noise_samples.emplace_back("drive_" + std::to_string(i), std::move(kept_noise[i]));
      out.state_samples.emplace_back("source_state_" + std::to_string(i),
                                     std::move(kept_source[i]));
      out.state_samples.emplace_back("mapped_state_" + std::to_string(i),
                                     std::move(kept_target[i]));
    }
    double stat = *std::max_element(devs.begin(), devs.end());
    out.details["pushforward"] = {{"max_deviation", stat}, {"paths", c.paths}};
    checks.add(out, "pushforward-deviation", stat, 1e-7, "<=",
               "sup distance between the mapped solution and the pushed-forward solve");
  }

  if (checks.wants("map-identity")) {
    std::vector<Vec> probes = {vec2(0.2, -0.3), vec2(-1.0, 0.5), vec2(1.4, 2.0)};
    std::vector<Vec> target_probes = {vec2(0.5, -1.0), vec2(1.2, 0.4), vec2(2.5, 1.0)};
    double stat = std::max(identity_defect(source_map, probes),
                           identity_defect(target_map, target_probes));
    checks.add(out, "map-identity", stat, 1e-9, "<=",
               "one-increment maps fix the state at the identity increment");
  }
}

// ---------------------------------------------------------------------------
// Scenario: rotations of stochastic integrals with path-dependent integrands
// ---------------------------------------------------------------------------

json nonmarkov_gauge_defaults() {
  return json{
      {"scenario", "nonmarkov_gauge"},
      {"seed", 904},
      {"paths", 20000},
      {"step", 0.001},
      {"horizon", 1.0},
      {"paths_written", 2},
      {"out", "out"},
      {"law_times", {0.5, 1.0}},
      {"noise", {{"kind", "modulated-brownian"}, {"gain", 0.9}, {"rate", 2.0}}},
      {"sde", {{"kind", "noise-only"}}},
      {"transformation",
       {{"kind", "rotation-control"},
        {"gains", {1.3, 0.9}},
        {"rejected_angle", 1.5707963267948966}}},
      {"checks",
       {"nonmarkov-law-marginals", "nonmarkov-law-covariance", "nonmarkov-mixed-rejected"}},
      {"tolerances", json::object()},
  };
}

void run_nonmarkov_gauge(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "modulated-brownian");
  expect_kind(cfg, "sde", "noise-only");
  expect_kind(cfg, "transformation", "rotation-control");
  double gain = cfg.at("noise").at("gain").get<double>();
  if (!(gain >= 0) || gain >= 1) fail("\"noise.gain\" must lie in [0, 1)");
  double rate = positive_number(cfg, "noise", "rate");
  const json& gains_json = cfg.at("transformation").at("gains");
  if (gains_json.size() != 2) fail("\"transformation.gains\" must hold two numbers");
  double gain1 = gains_json[0].get<double>(), gain2 = gains_json[1].get<double>();
  double rejected_angle = cfg.at("transformation").at("rejected_angle").get<double>();
  std::vector<double> law_times = law_times_of(cfg);

  CheckSet checks(cfg);
  out.seeds["streams"] = {{"law_transformed", 1},
                          {"law_reference", 2},
                          {"rejected_transformed", 3},
                          {"rejected_reference", 4}};

  // Components 0 and 1 are integrals of G dW with the predictable integrand
  // G = 1 + gain*tanh(rate * W0); component 2 is the unmodulated driver W0.
  auto modulated = [&](std::uint64_t seed) {
    SemimartingalePath w = sample_brownian(3, c.horizon, c.step, seed);
    SemimartingalePath m = w;
    for (std::size_t k = 0; k < m.cont_increments.size(); ++k) {
      double g = 1.0 + gain * std::tanh(rate * w.values[k][2]);
      m.cont_increments[k][0] = g * w.cont_increments[k][0];
      m.cont_increments[k][1] = g * w.cont_increments[k][1];
    }
    replay(m);
    return m;
  };

  if (checks.wants_any({"nonmarkov-law-marginals", "nonmarkov-law-covariance"})) {
    const GaugeAction action = pair_rotation_action(0, 1, 3);
    std::vector<SemimartingalePath> moved(c.paths), fresh(c.paths);
    std::vector<SemimartingalePath> kept(c.paths_written);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath m = modulated(sub_seed(c.seed, 1, i));
      PredictableControl control{[gain1, gain2](const PathView& v) {
        return vec1(gain1 * std::tanh(v.value()[0]) + gain2 * v.value()[2]);
      }};
      SemimartingalePath r = apply_gauge_to_noise(m, action, control);
      if (i < kept.size()) kept[i] = r;
      moved[i] = decimate_to(r, law_times);
      fresh[i] = decimate_to(modulated(sub_seed(c.seed, 2, i)), law_times);
    });
    for (std::size_t i = 0; i < kept.size(); ++i)
      out.noise_samples.emplace_back("rotated_modulated_" + std::to_string(i),
                                     std::move(kept[i]));
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(moved, fresh, lc);
    out.details["nonmarkov_law"] = to_json(rep);
    checks.add(out, "nonmarkov-law-marginals", rep.worst_p_adjusted, 0.01, ">=", rep.summary());
    checks.add(out, "nonmarkov-law-covariance", rep.max_cov_deviation_se, 5.0, "<",
               "max covariance deviation in SE units");
  }

  // Negative control: rotating a modulated component into the unmodulated
  // driver changes the variance profile and must be rejected.
  if (checks.wants("nonmarkov-mixed-rejected")) {
    const GaugeAction mixed = pair_rotation_action(0, 2, 3);
    std::vector<SemimartingalePath> moved(c.paths), fresh(c.paths);
    parallel_for(c.paths, [&](std::size_t i) {
      PredictableControl quarter{[rejected_angle](const PathView&) {
        return vec1(rejected_angle);
      }};
      moved[i] = decimate_to(
          apply_gauge_to_noise(modulated(sub_seed(c.seed, 3, i)), mixed, quarter), law_times);
      fresh[i] = decimate_to(modulated(sub_seed(c.seed, 4, i)), law_times);
    });
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(moved, fresh, lc);
    out.details["nonmarkov_mixed"] = to_json(rep);
    checks.add(out, "nonmarkov-mixed-rejected", rep.worst_p_adjusted, 0.01, "<",
               "mixing modulated and unmodulated components must be rejected");
  }
}

// ---------------------------------------------------------------------------
// Scenario: iterated random affine maps
// ---------------------------------------------------------------------------

json iterated_map_defaults() {
  return json{
      {"scenario", "iterated_map"},
      {"seed", 905},
      {"paths", 12000},
      {"step", 1.0},
      {"horizon", 12.0},
      {"paths_written", 2},
      {"out", "out"},
      {"law_times", {1.0, 12.0}},
      {"noise",
       {{"kind", "iterated-affine"},
        {"angle_sd", 0.4},
        {"log_scale_sd", 0.15},
        {"translation_scale", 0.5}}},
      {"sde", {{"kind", "affine-group-action"}, {"x0", {0.0, 0.0}}}},
      {"transformation",
       {{"kind", "fixed-rotation"},
        {"angle", 1.0471975511965976},
        {"rejected_angle", 0.7853981633974483}}},
      {"checks", {"iterated-rotation-law", "iterated-rotation-covariance",
                  "iterated-square-rejected"}},
      {"tolerances", json::object()},
  };
}

SolutionPath rotate_solution(const Mat& r, SolutionPath path) {
  for (auto& s : path.states) s = r * s;
  for (auto& [index, pre] : path.jumps) pre = r * pre;
  return path;
}

void run_iterated_map(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "iterated-affine");
  expect_kind(cfg, "sde", "affine-group-action");
  expect_kind(cfg, "transformation", "fixed-rotation");
  if (cfg.at("step").get<double>() != 1.0) fail("iterated maps use unit steps; set step = 1");
  int steps = static_cast<int>(std::llround(c.horizon));
  if (steps < 2 || std::abs(c.horizon - steps) > 0) fail("\"horizon\" must be an integer >= 2");
  double angle_sd = positive_number(cfg, "noise", "angle_sd");
  double log_scale_sd = positive_number(cfg, "noise", "log_scale_sd");
  double translation_scale = positive_number(cfg, "noise", "translation_scale");
  double angle = cfg.at("transformation").at("angle").get<double>();
  double rejected_angle = cfg.at("transformation").at("rejected_angle").get<double>();
  const json& x0_json = cfg.at("sde").at("x0");
  if (x0_json.size() != 2) fail("\"sde.x0\" must hold two numbers");
  Vec x0 = vec2(x0_json[0].get<double>(), x0_json[1].get<double>());
  std::vector<double> law_times;
  for (const auto& t : cfg.at("law_times")) {
    double v = t.get<double>();
    long n = std::llround(v);
    if (std::abs(v - n) > 0 || n < 1 || n > steps)
      fail("\"law_times\" must be integers in [1, horizon]");
    law_times.push_back(v);
  }
  if (law_times.empty()) fail("\"law_times\" must not be empty");

  CheckSet checks(cfg);
  out.seeds["streams"] = {
      {"law_a", 1}, {"law_b", 2}, {"rejected_a", 3}, {"rejected_b", 4}};
  const LieGroupChart& group = shared_gl_rm_chart(2, 2);
  const CanonicalSdeMap sde = affine_plane_sde();

  // Step law: K = scale * rotation (conjugation-invariant under rotations),
  // translation H from the configured law.
  auto gaussian_step = [angle_sd, log_scale_sd, translation_scale](Rng& rng) {
    double phi = angle_sd * rng.normal();
    double scale = std::exp(log_scale_sd * rng.normal());
    Mat k = scale * rot2(phi);
    Vec h = translation_scale * rng.normal_vec(2);
    return std::make_pair(k, h);
  };
  auto square_step = [angle_sd, log_scale_sd, translation_scale](Rng& rng) {
    double phi = angle_sd * rng.normal();
    double scale = std::exp(log_scale_sd * rng.normal());
    Mat k = scale * rot2(phi);
    double half = translation_scale * std::sqrt(3.0);
    Vec h = vec2(rng.uniform(-half, half), rng.uniform(-half, half));
    return std::make_pair(k, h);
  };

  using StepLaw = std::function<std::pair<Mat, Vec>(Rng&)>;
  auto solve_ensemble = [&](std::uint64_t stream, const StepLaw& law,
                            std::vector<SemimartingalePath>* keep_noise) {
    std::vector<SolutionPath> states(c.paths);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath z =
          sample_discrete_iterated(group, law, steps, sub_seed(c.seed, stream, i));
      if (keep_noise && i < keep_noise->size()) (*keep_noise)[i] = z;
      states[i] = solve_increment_map(sde, z, x0);
    });
    return states;
  };

  if (checks.wants_any({"iterated-rotation-law", "iterated-rotation-covariance"})) {
    std::vector<SemimartingalePath> kept(c.paths_written);
    std::vector<SolutionPath> a = solve_ensemble(1, gaussian_step, &kept);
    std::vector<SolutionPath> b = solve_ensemble(2, gaussian_step, nullptr);
    Mat r = rot2(angle);
    for (auto& p : b) p = rotate_solution(r, std::move(p));
    for (std::size_t i = 0; i < kept.size(); ++i)
      out.noise_samples.emplace_back("iterated_drive_" + std::to_string(i), std::move(kept[i]));
    for (std::size_t i = 0; i < std::min(c.paths_written, a.size()); ++i)
      out.state_samples.emplace_back("iterated_state_" + std::to_string(i), a[i]);
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(a, b, lc);
    out.details["iterated_law"] = to_json(rep);
    checks.add(out, "iterated-rotation-law", rep.worst_p_adjusted, 0.01, ">=", rep.summary());
    checks.add(out, "iterated-rotation-covariance", rep.max_cov_deviation_se, 5.0, "<",
               "max covariance deviation in SE units");
  }

  // Negative control: a square-supported translation law is not rotation
  // invariant, so the rotated ensemble must be rejected.
  if (checks.wants("iterated-square-rejected")) {
    std::vector<SolutionPath> a = solve_ensemble(3, square_step, nullptr);
    std::vector<SolutionPath> b = solve_ensemble(4, square_step, nullptr);
    Mat r = rot2(rejected_angle);
    for (auto& p : b) p = rotate_solution(r, std::move(p));
    LawTestConfig lc;
    lc.times = law_times;
    LawTestReport rep = law_equality_test(a, b, lc);
    out.details["iterated_rejected"] = to_json(rep);
    checks.add(out, "iterated-square-rejected", rep.worst_p_adjusted, 0.01, "<",
               "square-supported translations must be rejected under rotation");
  }
}

// ---------------------------------------------------------------------------
// Scenario: worked affine system on the plane
// ---------------------------------------------------------------------------

json affine_gl2_example_defaults() {
  return json{
      {"scenario", "affine_gl2_example"},
      {"seed", 906},
      {"paths", 100},
      {"step", 0.001},
      {"horizon", 1.0},
      {"paths_written", 2},
      {"out", "out"},
      {"noise",
       {{"kind", "matrix-translation-levy"},
        {"gl_diffusion", 0.09},
        {"shift_diffusion", 0.25},
        {"jump_intensity", 1.0},
        {"gl_jump_scale", 0.15},
        {"shift_jump_scale", 0.25}}},
      {"sde", {{"kind", "affine-group-action"}, {"x0", {1.0, 0.0}}}},
      {"transformation", {{"kind", "rotation-symmetry"}, {"angles", {0.3, 0.7, 1.5}}}},
      {"cir", {{"paths", 10000}, {"step", 0.005}, {"times", {0.5, 1.0}}}},
      {"checks",
       {"determining-analytic", "determining-fd", "determining-perturbed", "finite-symmetry",
        "strong-transform-bitwise", "rectify-closed-form", "calculus-compose-invert",
        "calculus-flow-group", "calculus-pushforward", "reduction-identity", "reduction-theta",
        "cir-mean"}},
      {"tolerances", json::object()},
  };
}

// Radial one-increment map: with the state aligned to the first axis by the
// rectifying rotation, one affine move sends rho = |x|^2 to
// (sqrt(rho) m00 + v0)^2 + (sqrt(rho) m10 + v1)^2.
CanonicalSdeMap radial_sde() {
  CanonicalSdeMap sde;
  sde.state_dim = 1;
  sde.noise_chart = &shared_gl_rm_chart(2, 2);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec&) {
    double s = std::sqrt(std::max(x[0], 0.0));
    double c0 = s * dz[0] + dz[4];
    double c1 = s * dz[2] + dz[5];
    return vec1(c0 * c0 + c1 * c1);
  };
  sde.state_domain = [](const Vec& x) { return x[0] >= 0; };
  return sde;
}

// Per-step rectifying controls: the continuous move of step k is rotated by
// -angle(X at the left node), a jump by -angle(pre-jump state).
struct RectifyControls {
  std::vector<Vec> cont;
  std::vector<Vec> jump;
};

RectifyControls rectify_controls(const SolutionPath& x) {
  RectifyControls ctl;
  std::size_t steps = x.grid.size() - 1;
  ctl.cont.resize(steps);
  ctl.jump.resize(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    ctl.cont[k] = vec1(-angle_of(x.states[k]));
    ctl.jump[k] = ctl.cont[k];
  }
  for (const auto& [index, pre] : x.jumps)
    if (index >= 1) ctl.jump[index - 1] = vec1(-angle_of(pre));
  return ctl;
}

void run_affine_gl2_example(const json& cfg, ScenarioResult& out) {
  CommonConfig c = common_of(cfg);
  expect_kind(cfg, "noise", "matrix-translation-levy");
  expect_kind(cfg, "sde", "affine-group-action");
  expect_kind(cfg, "transformation", "rotation-symmetry");
  double gl_diffusion = positive_number(cfg, "noise", "gl_diffusion");
  double shift_diffusion = positive_number(cfg, "noise", "shift_diffusion");
  double jump_intensity = cfg.at("noise").at("jump_intensity").get<double>();
  if (jump_intensity < 0) fail("\"noise.jump_intensity\" must be nonnegative");
  double gl_jump_scale = positive_number(cfg, "noise", "gl_jump_scale");
  double shift_jump_scale = positive_number(cfg, "noise", "shift_jump_scale");
  const json& x0_json = cfg.at("sde").at("x0");
  if (x0_json.size() != 2) fail("\"sde.x0\" must hold two numbers");
  Vec x0 = vec2(x0_json[0].get<double>(), x0_json[1].get<double>());
  if (x0.norm() < 1e-6) fail("\"sde.x0\" must be away from the origin");
  const json& angles_json = cfg.at("transformation").at("angles");
  if (angles_json.empty()) fail("\"transformation.angles\" must not be empty");
  long cir_paths = positive_count(cfg, "cir", "paths", 100);
  double cir_step = positive_number(cfg, "cir", "step");
  std::vector<double> cir_times;
  for (const auto& t : cfg.at("cir").at("times")) {
    double v = t.get<double>();
    if (!(v > 0) || v > 1.0 + 1e-12) fail("\"cir.times\" must lie in (0, 1]");
    cir_times.push_back(v);
  }
  if (cir_times.empty()) fail("\"cir.times\" must not be empty");

  CheckSet checks(cfg);
  out.seeds["streams"] = {{"strong", 1}, {"reduction", 2}, {"cir", 3}, {"hunt", 4}};

  const CanonicalSdeMap sde = affine_plane_sde();
  const SdeJacobians jac = affine_plane_jacobians();
  const GaugeAction gauge = rotation_gauge_action_gl2r2();
  const InfinitesimalTransformation v = plane_rotation_generator();
  const CanonicalSdeMap rsde = radial_sde();

  // --- determining equations ----------------------------------------------
  if (checks.wants_any({"determining-analytic", "determining-fd", "determining-perturbed",
                        "finite-symmetry"})) {
    auto grid = filter_grid(sde, symmetry_grid(SymmetryGridSpec{}, 2, *sde.noise_chart));
    if (checks.wants("determining-analytic")) {
      auto rep = determining_residual(sde, v, &gauge, nullptr, grid, &jac);
      out.details["determining_analytic"] = to_json(rep);
      checks.add(out, "determining-analytic", rep.sup_norm, 1e-9, "<=",
                 "rotation generator residual with analytic derivatives over " +
                     std::to_string(grid.size()) + " grid points");
    }
    if (checks.wants("determining-fd")) {
      auto rep = determining_residual(sde, v, &gauge, nullptr, grid);
      out.details["determining_fd"] = to_json(rep);
      checks.add(out, "determining-fd", rep.sup_norm, 1e-5, "<=",
                 "rotation generator residual with finite-difference derivatives");
    }
    if (checks.wants("determining-perturbed")) {
      InfinitesimalTransformation stretch;
      stretch.state_dim = 2;
      stretch.y = [](const Vec& x) { return vec2(x[0], 0.0); };
      auto rep = determining_residual(sde, stretch, &gauge, nullptr, grid, &jac);
      checks.add(out, "determining-perturbed", rep.sup_norm, 0.1, ">",
                 "a stretch field must violate the determining equations");
    }
    if (checks.wants("finite-symmetry")) {
      double stat = 0;
      for (const auto& a_json : angles_json) {
        double a = a_json.get<double>();
        StochasticTransformation t;
        Mat r = rot2(a), rinv = rot2(-a);
        t.phi.forward = [r](const Vec& x) { return Vec(r * x); };
        t.phi.inverse = [rinv](const Vec& y) { return Vec(rinv * y); };
        t.phi.jacobian = [r](const Vec&) { return r; };
        t.group = gauge.group;
        t.b_map = [a](const Vec&) { return vec1(a); };
        auto rep = finite_symmetry_check(sde, t, &gauge, nullptr, grid, 1e-8);
        stat = std::max(stat, rep.max_deviation);
      }
      checks.add(out, "finite-symmetry", stat, 1e-8, "<=",
                 "finite rotations leave the one-increment map fixed, max over angles");
    }
  }

  // --- noise triplet shared by the pathwise checks -------------------------
  LevyTriplet tri;
  tri.chart = &shared_gl_rm_chart(2, 2);
  tri.b0 = Vec::Zero(6);
  tri.A0 = Mat::Zero(6, 6);
  for (int d = 0; d < 4; ++d) tri.A0(d, d) = gl_diffusion;
  tri.A0(4, 4) = shift_diffusion;
  tri.A0(5, 5) = shift_diffusion;
  tri.jump_intensity = jump_intensity;
  tri.jump_sampler = [gl_jump_scale, shift_jump_scale](Rng& rng) {
    Mat m(2, 2);
    do {
      m << 1.0 + gl_jump_scale * rng.normal(), gl_jump_scale * rng.normal(),
          gl_jump_scale * rng.normal(), 1.0 + gl_jump_scale * rng.normal();
    } while (std::abs(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) < 0.1);
    Vec z(6);
    z << m(0, 0), m(0, 1), m(1, 0), m(1, 1), shift_jump_scale * rng.normal(),
        shift_jump_scale * rng.normal();
    return z;
  };
  if (tri.jump_intensity > 0) tri.hunt_mean = hunt_mean_mc(tri, sub_seed(c.seed, 4));

  // --- strong transformation acts pathwise without rounding ---------------
  if (checks.wants("strong-transform-bitwise")) {
    StochasticTransformation strong;
    Mat r = rot2(M_PI_2), rinv = rot2(-M_PI_2);
    strong.phi.forward = [r](const Vec& x) { return Vec(r * x); };
    strong.phi.inverse = [rinv](const Vec& y) { return Vec(rinv * y); };
    strong.phi.jacobian = [r](const Vec&) { return r; };
    CanonicalSdeMap mapped = e_action(strong, sde, nullptr, nullptr);
    std::vector<double> devs(c.paths, 0.0);
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath z = sample_levy(tri, c.horizon, c.step, sub_seed(c.seed, 1, i));
      SolutionPath x = solve_increment_map(sde, z, x0);
      SolutionPath y = solve_increment_map(mapped, z, Vec(r * x0));
      if (x.exploded != y.exploded || x.grid.size() != y.grid.size()) {
        devs[i] = std::numeric_limits<double>::infinity();
        return;
      }
      double dev = 0;
      for (std::size_t k = 0; k < x.grid.size(); ++k)
        dev = std::max(dev, (Vec(r * x.states[k]) - y.states[k]).lpNorm<Eigen::Infinity>());
      devs[i] = dev;
    });
    double stat = *std::max_element(devs.begin(), devs.end());
    out.details["strong_transform"] = {{"max_deviation", stat}, {"paths", c.paths}};
    checks.add(out, "strong-transform-bitwise", stat, 0.0, "<=",
               "quarter-turn image of the solution equals the solve of the mapped equation");
  }

  // --- rectification in closed form ---------------------------------------
  if (checks.wants("rectify-closed-form")) {
    StochasticTransformation rectifier;
    rectifier.group = gauge.group;
    rectifier.b_map = [](const Vec& x) { return vec1(-angle_of(x)); };
    std::vector<Vec> points;
    for (double radius : {0.6, 1.0, 1.4})
      for (int k = 0; k < 16; ++k) {
        double theta = 2 * M_PI * (k + 0.5) / 16;
        points.push_back(vec2(radius * std::cos(theta), radius * std::sin(theta)));
      }
    RectifyReport rep = rectify_check(rectifier, {v}, gauge, points);
    double stat = std::max(rep.max_b_residual, rep.max_eta_residual);
    out.details["rectify"] = {{"max_b_residual", rep.max_b_residual},
                              {"max_eta_residual", rep.max_eta_residual},
                              {"evaluated", rep.evaluated},
                              {"skipped", rep.skipped}};
    checks.add(out, "rectify-closed-form", stat, 1e-6, "<=",
               "the minus-angle control solves the rectification equations on an annulus");
  }

  // --- calculus group laws -------------------------------------------------
  std::vector<Vec> probes;
  for (double px : {-1.8, -0.9, 0.0, 0.9, 1.8})
    for (double py : {-1.8, -0.6, 0.6, 1.8}) probes.push_back(vec2(px, py));

  if (checks.wants("calculus-compose-invert")) {
    StochasticTransformation t1;
    {
      Mat r = rot2(0.5), rinv = rot2(-0.5);
      t1.phi.forward = [r](const Vec& x) { return Vec(r * x); };
      t1.phi.inverse = [rinv](const Vec& y) { return Vec(rinv * y); };
      t1.phi.jacobian = [r](const Vec&) { return r; };
      t1.group = gauge.group;
      t1.b_map = [](const Vec& x) { return vec1(0.3 + 0.2 * std::sin(x[0])); };
      t1.eta = [](const Vec& x) { return std::exp(0.1 * std::tanh(x[1])); };
    }
    StochasticTransformation t2;
    {
      Mat m(2, 2), minv(2, 2);
      m << 1, 0.3, 0, 1;
      minv << 1, -0.3, 0, 1;
      t2.phi.forward = [m](const Vec& x) { return Vec(m * x); };
      t2.phi.inverse = [minv](const Vec& y) { return Vec(minv * y); };
      t2.phi.jacobian = [m](const Vec&) { return m; };
      t2.group = gauge.group;
      t2.b_map = [](const Vec& x) { return vec1(0.1 * x[1]); };
      t2.eta = [](const Vec& x) { return 1.0 + 0.2 * std::tanh(x[0]); };
    }
    StochasticTransformation t3;
    t3.group = gauge.group;
    t3.b_map = [](const Vec& x) { return vec1(-0.2 + 0.15 * std::cos(x[0])); };

    double stat = 0;
    StochasticTransformation round = compose(invert(t1), t1);
    for (const Vec& x : probes) {
      stat = std::max(stat, (round.phi.fwd(x) - x).lpNorm<Eigen::Infinity>());
      stat = std::max(stat, round.b_of(x).lpNorm<Eigen::Infinity>());
      stat = std::max(stat, std::abs(round.eta_of(x) - 1.0));
    }
    StochasticTransformation left = compose(t3, compose(t2, t1));
    StochasticTransformation right = compose(compose(t3, t2), t1);
    for (const Vec& x : probes) {
      stat = std::max(stat, (left.phi.fwd(x) - right.phi.fwd(x)).lpNorm<Eigen::Infinity>());
      stat = std::max(stat, (left.b_of(x) - right.b_of(x)).lpNorm<Eigen::Infinity>());
      stat = std::max(stat, std::abs(left.eta_of(x) - right.eta_of(x)));
    }
    checks.add(out, "calculus-compose-invert", stat, 1e-12, "<=",
               "inverse and associativity laws of composition over state probes");
  }

  if (checks.wants("calculus-flow-group")) {
    double stat = 0;
    const std::vector<std::pair<double, double>> pairs = {{0.3, 0.4}, {0.7, -0.2}, {-0.5, 1.0}};
    for (const auto& [a, b] : pairs)
      for (const Vec& x : probes) {
        FlowPoint direct = flow_of(v, a + b, x, &gauge);
        FlowPoint first = flow_of(v, b, x, &gauge);
        FlowPoint second = flow_of(v, a, first.x, &gauge);
        Vec b_combined = gauge.group->multiply(second.b, first.b);
        stat = std::max(stat, (direct.x - second.x).lpNorm<Eigen::Infinity>());
        stat = std::max(stat, (direct.b - b_combined).lpNorm<Eigen::Infinity>());
        stat = std::max(stat, std::abs(direct.eta - second.eta * first.eta));
      }
    checks.add(out, "calculus-flow-group", stat, 1e-8, "<=",
               "one-parameter group property of the symmetry flow");
  }

  if (checks.wants("calculus-pushforward")) {
    StochasticTransformation ta;
    ta.group = gauge.group;
    ta.b_map = [](const Vec& x) { return vec1(0.4 + 0.3 * std::sin(x[0] + x[1])); };
    ta.eta = [](const Vec& x) { return std::exp(0.15 * std::tanh(x[0] - x[1])); };
    StochasticTransformation tb;
    {
      Mat m(2, 2), minv(2, 2);
      m << 0, -2, 0.5, 0;
      minv << 0, 2, -0.5, 0;
      tb.phi.forward = [m](const Vec& x) { return Vec(m * x); };
      tb.phi.inverse = [minv](const Vec& y) { return Vec(minv * y); };
      tb.phi.jacobian = [m](const Vec&) { return m; };
    }
    InfinitesimalTransformation once = push_forward(compose(tb, ta), v, &gauge);
    InfinitesimalTransformation twice = push_forward(tb, push_forward(ta, v, &gauge), &gauge);
    double stat = 0;
    for (const Vec& y : probes) {
      stat = std::max(stat, (once.y_of(y) - twice.y_of(y)).lpNorm<Eigen::Infinity>());
      stat = std::max(stat,
                      (once.c_of(y, gauge.generators) - twice.c_of(y, gauge.generators))
                          .lpNorm<Eigen::Infinity>());
      stat = std::max(stat, std::abs(once.tau_of(y) - twice.tau_of(y)));
    }
    checks.add(out, "calculus-pushforward", stat, 1e-8, "<=",
               "push-forward along a composition equals the iterated push-forward");
  }

  // --- reduction to the radial equation ------------------------------------
  if (checks.wants_any({"reduction-identity", "reduction-theta"})) {
    double identity_stat = 0, theta_stat = 0;
    std::vector<SolutionPath> kept_states(c.paths_written);
    std::vector<SolutionPath> kept_radial(c.paths_written);
    std::mutex stat_mutex;
    parallel_for(c.paths, [&](std::size_t i) {
      SemimartingalePath z = sample_levy(tri, c.horizon, c.step, sub_seed(c.seed, 2, i));
      SolutionPath x = solve_increment_map(sde, z, x0);
      if (x.exploded) throw std::runtime_error("reduction sample exploded; lower the noise");
      RectifyControls ctl = rectify_controls(x);
      SemimartingalePath zr = apply_gauge_steps(z, gauge, ctl.cont, &ctl.jump);
      SolutionPath radial = solve_increment_map(rsde, zr, vec1(x0.squaredNorm()));
      double dev = 0;
      for (std::size_t k = 0; k < x.grid.size(); ++k)
        dev = std::max(dev, std::abs(radial.states[k][0] - x.states[k].squaredNorm()));

      // Angle replay from the rotated drive alone: each move advances the
      // angle by the direction of the rectified image of the moved state.
      double theta = angle_of(x0);
      double theta_dev = 0;
      const LieGroupChart& chart = *zr.chart;
      std::size_t step_count = zr.steps();
      for (std::size_t k = 0; k < step_count; ++k) {
        double rho = radial.states[k][0];
        Vec element = advance(chart, chart.identity, zr.cont_increments[k]);
        double s = std::sqrt(std::max(rho, 0.0));
        theta += std::atan2(s * element[2] + element[5], s * element[0] + element[4]);
        if (const JumpMark* mark = zr.jump_at(k + 1)) {
          double c0 = s * element[0] + element[4];
          double c1 = s * element[2] + element[5];
          double rho_mid = c0 * c0 + c1 * c1;
          double sm = std::sqrt(std::max(rho_mid, 0.0));
          const Vec& jump = mark->jump.value;
          theta += std::atan2(sm * jump[2] + jump[5], sm * jump[0] + jump[4]);
        }
        theta_dev = std::max(
            theta_dev, std::abs(std::remainder(theta - angle_of(x.states[k + 1]), 2 * M_PI)));
      }
      {
        std::lock_guard<std::mutex> lock(stat_mutex);
        identity_stat = std::max(identity_stat, dev);
        theta_stat = std::max(theta_stat, theta_dev);
      }
      if (i < kept_states.size()) {
        kept_states[i] = x;
        kept_radial[i] = radial;
      }
    });
    for (std::size_t i = 0; i < kept_states.size(); ++i) {
      out.state_samples.emplace_back("plane_state_" + std::to_string(i),
                                     std::move(kept_states[i]));
      out.state_samples.emplace_back("radial_state_" + std::to_string(i),
                                     std::move(kept_radial[i]));
    }
    out.details["reduction"] = {{"max_identity_deviation", identity_stat},
                                {"max_theta_deviation", theta_stat},
                                {"paths", c.paths}};
    checks.add(out, "reduction-identity", identity_stat, 1e-12, "<=",
               "radial solve reproduces the squared radius of the plane solve");
    checks.add(out, "reduction-theta", theta_stat, 1e-8, "<=",
               "angle replay from the rotated drive matches the plane solve");
  }

  // --- mean law of the reduced radial process ------------------------------
  if (checks.wants("cir-mean")) {
    LevyTriplet shift_only;
    shift_only.chart = &shared_gl_rm_chart(2, 2);
    shift_only.b0 = Vec::Zero(6);
    shift_only.A0 = Mat::Zero(6, 6);
    shift_only.A0(4, 4) = 1.0;
    shift_only.A0(5, 5) = 1.0;
    std::size_t n = static_cast<std::size_t>(cir_paths);
    std::vector<std::size_t> nodes;
    for (double t : cir_times) {
      double idx = t / cir_step;
      std::size_t k = static_cast<std::size_t>(std::llround(idx));
      if (std::abs(idx - static_cast<double>(k)) > 1e-9)
        fail("\"cir.times\" must be multiples of cir.step");
      nodes.push_back(k);
    }
    std::vector<std::vector<double>> values(cir_times.size(), std::vector<double>(n, 0.0));
    parallel_for(n, [&](std::size_t i) {
      SemimartingalePath z = sample_levy(shift_only, 1.0, cir_step, sub_seed(c.seed, 3, i));
      SolutionPath x = solve_increment_map(sde, z, x0);
      RectifyControls ctl = rectify_controls(x);
      SemimartingalePath zr = apply_gauge_steps(z, gauge, ctl.cont, &ctl.jump);
      SolutionPath radial = solve_increment_map(rsde, zr, vec1(x0.squaredNorm()));
      for (std::size_t t = 0; t < nodes.size(); ++t) values[t][i] = radial.states[nodes[t]][0];
    });
    double stat = 0;
    json mean_rows = json::array();
    double r0 = x0.squaredNorm();
    for (std::size_t t = 0; t < cir_times.size(); ++t) {
      double mean = 0;
      for (double vv : values[t]) mean += vv;
      mean /= static_cast<double>(n);
      double var = 0;
      for (double vv : values[t]) var += (vv - mean) * (vv - mean);
      var /= static_cast<double>(n - 1);
      double se = std::sqrt(var / static_cast<double>(n));
      double target = r0 + 2.0 * cir_times[t];
      double dev = std::abs(mean - target) / std::max(se, 1e-12);
      stat = std::max(stat, dev);
      mean_rows.push_back({{"time", cir_times[t]},
                           {"mean", mean},
                           {"target", target},
                           {"se", se},
                           {"deviation_se", dev}});
    }
    out.details["cir_mean"] = mean_rows;
    checks.add(out, "cir-mean", stat, 5.0, "<",
               "mean of the reduced radial process matches r0 + 2t, SE units");
  }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct ScenarioEntry {
  const char* name;
  const char* summary;
  json (*defaults)();
  void (*run)(const json&, ScenarioResult&);
};

const std::vector<ScenarioEntry>& registry() {
  static const std::vector<ScenarioEntry> entries = {
      {"bm_rotation_gauge",
       "History-dependent rotations preserve planar Brownian noise in law; isotropic "
       "compound-Poisson triplets pass the rotation criterion while axis-supported jumps fail; "
       "empirical characteristics commute with the rotation.",
       bm_rotation_gauge_defaults, run_bm_rotation_gauge},
      {"alpha_stable_time",
       "State-dependent time changes compensated by the square-root scaling preserve Brownian "
       "noise pathwise; the truncated stable triplet passes the matching power scaling; linear "
       "scaling of Brownian noise is rejected.",
       alpha_stable_time_defaults, run_alpha_stable_time},
      {"marcus_pushforward",
       "The flow-type jump rule commutes with smooth changes of state coordinates: solving the "
       "pushed-forward fields reproduces the mapped solution pathwise.",
       marcus_pushforward_defaults, run_marcus_pushforward},
      {"nonmarkov_gauge",
       "Rotations with predictable controls preserve stochastic integrals with path-dependent "
       "integrands; mixing a modulated component with the unmodulated driver is rejected.",
       nonmarkov_gauge_defaults, run_nonmarkov_gauge},
      {"iterated_map",
       "Iterated random affine maps: a rotation-invariant step law makes fixed rotations a "
       "symmetry of the solution law; a square-supported translation law is rejected.",
       iterated_map_defaults, run_iterated_map},
      {"affine_gl2_example",
       "Worked affine system on the plane: determining equations, finite rotation symmetries, an "
       "exact strong transformation, rectification, reduction to a radial equation with angle "
       "replay, and the squared-radius mean law.",
       affine_gl2_example_defaults, run_affine_gl2_example},
  };
  return entries;
}

const ScenarioEntry* find_entry(const std::string& name) {
  for (const auto& e : registry())
    if (name == e.name) return &e;
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public interface
// ---------------------------------------------------------------------------

bool ScenarioResult::pass() const {
  if (checks.empty()) return false;
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

const std::vector<ScenarioInfo>& catalog() {
  static const std::vector<ScenarioInfo> infos = [] {
    std::vector<ScenarioInfo> v;
    for (const auto& e : registry()) v.push_back(ScenarioInfo{e.name, e.summary});
    return v;
  }();
  return infos;
}

bool known_scenario(const std::string& name) { return find_entry(name) != nullptr; }

json default_config(const std::string& name) {
  const ScenarioEntry* entry = find_entry(name);
  if (!entry) {
    std::string known;
    for (const auto& e : registry()) known += std::string(known.empty() ? "" : ", ") + e.name;
    fail("unknown scenario \"" + name + "\" (known: " + known + ")");
  }
  return entry->defaults();
}

ScenarioResult run_scenario(const json& config) {
  if (!config.is_object()) fail("config must be a JSON object");
  if (!config.contains("scenario")) fail("config requires a \"scenario\" key");
  if (!config.at("scenario").is_string()) fail("\"scenario\" must be a string");
  std::string name = config.at("scenario").get<std::string>();
  const ScenarioEntry* entry = find_entry(name);
  if (!entry) {
    std::string known;
    for (const auto& e : registry()) known += std::string(known.empty() ? "" : ", ") + e.name;
    fail("unknown scenario \"" + name + "\" (known: " + known + ")");
  }
  json defaults = entry->defaults();
  json cfg = merge_config(defaults, config, "");
  validate_checks(cfg, defaults);
  CommonConfig c = common_of(cfg);  // validates the shared keys

  ScenarioResult out;
  out.scenario = name;
  out.config = cfg;
  out.seeds = json{{"master", c.seed}};
  entry->run(cfg, out);
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const void* data, std::size_t size) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& text) { return fnv1a(text.data(), text.size()); }

namespace {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string utc_stamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace

json to_json(const CheckResult& check) {
  return json{{"name", check.name},           {"pass", check.pass},
              {"statistic", check.statistic}, {"threshold", check.threshold},
              {"comparison", check.comparison}, {"detail", check.detail}};
}

json report_json(const ScenarioResult& result) {
  json checks = json::array();
  for (const auto& c : result.checks) checks.push_back(to_json(c));
  return json{{"scenario", result.scenario},
              {"pass", result.pass()},
              {"checks", checks},
              {"seeds", result.seeds}};
}

json manifest_json(const ScenarioResult& result, const std::vector<ArtifactSummary>& artifacts) {
  json files = json::array();
  for (const auto& a : artifacts)
    files.push_back(json{{"file", a.file}, {"hash", a.hash}, {"bytes", a.bytes}});
  json checks = json::array();
  for (const auto& c : result.checks) checks.push_back(to_json(c));
  return json{{"format", kManifestFormat}, {"library", kLibraryVersion},
              {"scenario", result.scenario}, {"config", result.config},
              {"seeds", result.seeds},       {"pass", result.pass()},
              {"checks", checks},            {"artifacts", files}};
}

RunArtifacts write_artifacts(const ScenarioResult& result, const std::string& out_root,
                             std::string stamp) {
  namespace fs = std::filesystem;
  fs::path scenario_root = fs::path(out_root) / result.scenario;
  if (stamp.empty()) {
    std::string base = utc_stamp();
    stamp = base;
    int suffix = 0;
    while (fs::exists(scenario_root / stamp)) stamp = base + "-" + std::to_string(++suffix);
  }
  fs::path dir = scenario_root / stamp;
  fs::create_directories(dir / "paths");
  fs::create_directories(dir / "reports");

  RunArtifacts artifacts;
  artifacts.directory = dir.string();
  auto put = [&](const fs::path& rel, const std::string& content) {
    fs::path full = dir / rel;
    std::ofstream os(full, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + full.string() + " for writing");
    os << content;
    os.close();
    if (!os) throw std::runtime_error("failed to write " + full.string());
    artifacts.files.push_back(
        ArtifactSummary{rel.generic_string(), hex64(fnv1a(content)), content.size()});
  };

  for (const auto& [label, path] : result.noise_samples) {
    std::ostringstream os;
    write_csv(path, os);
    put(fs::path("paths") / (label + ".csv"), os.str());
  }
  for (const auto& [label, path] : result.state_samples) {
    std::ostringstream os;
    write_csv(path, os);
    put(fs::path("paths") / (label + ".csv"), os.str());
  }
  put(fs::path("reports") / "report.json", report_json(result).dump(2) + "\n");
  put(fs::path("reports") / "details.json", result.details.dump(2) + "\n");

  std::sort(artifacts.files.begin(), artifacts.files.end(),
            [](const ArtifactSummary& a, const ArtifactSummary& b) { return a.file < b.file; });
  std::string manifest = manifest_json(result, artifacts.files).dump(2) + "\n";
  fs::path manifest_path = dir / "manifest.json";
  std::ofstream os(manifest_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + manifest_path.string() + " for writing");
  os << manifest;
  os.close();
  if (!os) throw std::runtime_error("failed to write " + manifest_path.string());
  artifacts.manifest_file = manifest_path.string();
  return artifacts;
}

}  // namespace liesde::scenario
