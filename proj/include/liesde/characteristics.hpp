#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "liesde/noise.hpp"
#include "liesde/stats.hpp"
#include "liesde/transform.hpp"

#include "json.hpp"

namespace liesde {

// ---------------------------------------------------------------------------
// Empirical characteristics of a path ensemble.
// ---------------------------------------------------------------------------

// Jump-measure summary: per time bin, one histogram of the jump logarithmic
// coordinates along each axis. All time bins share the data-driven axis
// ranges so bins are comparable across time. total_mass counts every binned
// jump across the whole ensemble (not per path).
struct JumpHistogram {
  std::vector<double> time_edges;                 // time_bins + 1 edges
  std::vector<std::vector<Histogram>> marginals;  // [time_bin][axis]
  double total_mass = 0;
  std::size_t dropped = 0;  // jumps whose log coordinates failed
};

struct EstimateOptions {
  int time_bins = 8;
  int axis_bins = 32;
  // Evaluation grid: 0 = reuse the ensemble grid when every path shares it
  // bitwise, otherwise a uniform grid with 128 steps; > 0 forces a uniform
  // grid with that many steps. Paths may carry individual grids (e.g. with
  // inserted jump times) as long as they share the endpoints.
  int eval_steps = 0;
  std::size_t min_paths = 100;        // fewer paths -> error
  std::size_t reservoir_cap = 50000;  // raw jump records kept for transforms
  std::uint64_t reservoir_seed = 7777;
};

// Cumulative empirical characteristics on the evaluation grid:
//   b_hat[j] ~ integral of the drift over [t0, times[j]] with respect to the
//              chart's Hunt functions (continuous log-increments plus the
//              Hunt value of every jump),
//   a_hat[j] ~ accumulated covariance of the continuous log-increments,
//              centered by the ensemble drift rate so a deterministic drift
//              does not leak into the quadratic part,
//   nu_hat   ~ binned jump measure; jump_reservoir keeps raw (time, log)
//              records (uniformly thinned past reservoir_cap) so estimates
//              can be pushed through noise transformations exactly.
// Each path's cumulative sums are read off at the largest of its own nodes
// not exceeding the evaluation time. Standard errors are across-path
// standard deviations divided by sqrt(paths).
struct CharacteristicsEstimate {
  const LieGroupChart* chart = nullptr;
  std::vector<double> times;
  std::vector<Vec> b_hat, b_se;
  std::vector<Mat> a_hat, a_se;
  JumpHistogram nu_hat;
  std::vector<std::pair<double, Vec>> jump_reservoir;
  double reservoir_scale = 1;  // binned jumps per kept record (1 unless capped)
  std::size_t sample_count = 0;
  int noise_dim = 0;
  std::string hunt_convention;

  std::size_t node_index(double time) const;  // throws when not a grid node
};

CharacteristicsEstimate estimate_characteristics(const std::vector<SemimartingalePath>& paths,
                                                 const EstimateOptions& opt = {});

// ---------------------------------------------------------------------------
// Transformation of characteristics under a gauge action.
// ---------------------------------------------------------------------------

struct TripletTransformOptions {
  int mc_samples = 200000;  // drift-correction Monte Carlo (rel. error ~1e-3)
  std::uint64_t seed = 424242;
};

// Triplet of the noise dZ' = Xi_g(dZ) for a fixed group element g:
//   b' = Upsilon_g b + (1/2) O_g : A + correction,
//   A' = Upsilon_g A Upsilon_g^T,   nu' = (Xi_g)_* nu,
// where the drift correction integrates h(z') - Upsilon_g h(Xi_{g^-1} z')
// against the *transformed* jump measure, i.e. equals
//   intensity * E[ h(Xi_g J) - Upsilon_g h(J) ],  J ~ jump law.
// The correction is Monte Carlo unless the triplet has no jumps or the
// action is isometric-log with the default Hunt functions (then it vanishes
// identically and is returned as exact zero).
struct TransformedTriplet {
  LevyTriplet triplet;
  Vec correction;
  Vec correction_se;       // zero when the correction is exact
  bool monte_carlo = false;
};

TransformedTriplet transformed_characteristics(const LevyTriplet& triplet,
                                               const GaugeAction& action, const Vec& g,
                                               const TripletTransformOptions& opt = {});

// Stepwise transformation of an empirical estimate: g_steps[k] acts on the
// increment over [times[k], times[k+1]] (a single g is broadcast). Drift and
// diffusion increments map through Upsilon/O; the per-jump Hunt terms inside
// b_hat are replaced using the jump reservoir; the reservoir itself is pushed
// through Xi and the histograms rebuilt. Standard errors are propagated to
// first order (entrywise |Upsilon|), which is approximate.
CharacteristicsEstimate transformed_characteristics(const CharacteristicsEstimate& est,
                                                    const GaugeAction& action,
                                                    const std::vector<Vec>& g_steps,
                                                    const EstimateOptions& opt = {});

CharacteristicsEstimate transformed_characteristics(const CharacteristicsEstimate& est,
                                                    const GaugeAction& action, const Vec& g,
                                                    const EstimateOptions& opt = {});

// Deterministic time relabeling t -> beta(t) (strictly increasing): values
// are carried to the relabeled nodes unchanged, matching how a pure time
// change replays the same increments on the new clock.
CharacteristicsEstimate time_changed_characteristics(const CharacteristicsEstimate& est,
                                                     const std::function<double(double)>& beta);

// ---------------------------------------------------------------------------
// Invariance checks for independent-increment noise.
// ---------------------------------------------------------------------------

struct InvarianceOptions {
  bool full_check = false;   // force the correction-integral form of the tests
  double drift_tol = 1e-9;   // deterministic tolerance; MC parts widen the gate
  double diffusion_tol = 1e-9;
  double se_multiple = 5;
  double p_floor = 0.01;     // on Bonferroni-adjusted jump-law p-values
  int mc_samples = 20000;
  std::uint64_t seed = 99991;
};

struct InvarianceSample {
  Vec parameter;                  // the tested g (or [r])
  double drift_residual = 0;      // |b0 - rhs|_inf
  double drift_gate = 0;          // drift_tol + se_multiple * max MC SE
  double diffusion_residual = 0;  // |A0 - transformed A0|_inf
  double nu_worst_p = 1;          // worst adjusted p over jump-law projections
  double intensity_deviation_se = 0;
  bool pass = false;
  std::string note;
};

struct InvarianceReport {
  std::string mode;  // "simplified" or "full"
  std::vector<InvarianceSample> samples;
  bool pass = false;

  std::string summary() const;
};

// Gauge invariance of the triplet at each listed g. The simplified conditions
//   b0 = Upsilon_g b0,  A0 = Upsilon_g A0 Upsilon_g^T,  nu0 = (Xi_g)_* nu0
// require an automorphism action that is isometric in log coordinates with
// the chart's default Hunt functions; otherwise the full form with the
// second-order term and the Monte Carlo drift correction must be requested
// explicitly via full_check (the function refuses to run the simplified form
// outside its hypotheses). The jump-law condition compares fresh samples of
// J with Xi_g(J') by KS tests on axis projections, two diagonal projections
// and the log-coordinate norm, Bonferroni-adjusted.
InvarianceReport levy_gauge_check(const LevyTriplet& triplet, const GaugeAction& action,
                                  const std::vector<Vec>& gs, const InvarianceOptions& opt = {});

// Time-change invariance at each listed r > 0:
//   b0 = (1/r)(gamma_r b0 + Q_r : A0 + intensity * E[h(Gamma_r J) - gamma_r h(J)]),
//   A0 = (1/r) gamma_r A0 gamma_r^T,
//   nu0 = (1/r) (Gamma_r)_* nu0.
// The jump-law condition is checked above the common truncation radius of the
// two samples: matched conditional shapes (KS) plus the intensity ratio of
// the survivor rates in SE units.
InvarianceReport levy_time_check(const LevyTriplet& triplet, const TimeAction& action,
                                 const std::vector<double>& rs,
                                 const InvarianceOptions& opt = {});

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

nlohmann::json to_json(const JumpHistogram& hist);
nlohmann::json to_json(const CharacteristicsEstimate& est);
nlohmann::json to_json(const InvarianceReport& report);

// Columns: time, b0..b{n-1}, b_se..., a00..a{nn}, a_se...
void write_csv(const CharacteristicsEstimate& est, std::ostream& os);

}  // namespace liesde
