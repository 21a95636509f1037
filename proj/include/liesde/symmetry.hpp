#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "liesde/transform.hpp"

namespace liesde {

// ---------------------------------------------------------------------------
// Evaluation grids
// ---------------------------------------------------------------------------

// A grid point pairs a state x with a noise-group element z (in the chart
// coordinates of the noise group).
using GridPoint = std::pair<Vec, Vec>;

// Default grid: a tensor product of `states_per_dim` points per state
// coordinate in [state_lower, state_upper] crossed with `noise_points`
// elements sampled in exponential coordinates of sup-norm <= noise_scale,
// plus `extra_points` low-discrepancy (state, noise) pairs.  When the tensor
// product would exceed `max_tensor_states`, the states fall back to a
// low-discrepancy set of that size.
struct SymmetryGridSpec {
  int states_per_dim = 5;
  double state_lower = -2.0;
  double state_upper = 2.0;
  int noise_points = 5;
  double noise_scale = 0.5;
  int extra_points = 50;
  int max_tensor_states = 3125;
};

std::vector<GridPoint> symmetry_grid(const SymmetryGridSpec& spec, int state_dim,
                                     const LieGroupChart& noise);

// Keeps the points whose state lies in the SDE's domain and whose noise
// element lies in the chart domain.
std::vector<GridPoint> filter_grid(const CanonicalSdeMap& sde, std::vector<GridPoint> grid);

// ---------------------------------------------------------------------------
// Determining-equation residual
// ---------------------------------------------------------------------------

// Optional analytic Jacobians of the one-increment map psi(x, dz, k);
// d_state is the m x m matrix d psi / d x, d_noise the m x n matrix
// d psi / d(dz), both evaluated at (x, dz, k).  When absent the residual
// falls back to central finite differences.
struct SdeJacobians {
  std::function<Mat(const Vec& x, const Vec& dz, const Vec& k)> d_state;
  std::function<Mat(const Vec& x, const Vec& dz, const Vec& k)> d_noise;
};

// Residual of the first-order identities satisfied by an infinitesimal
// symmetry V = (Y, C, tau) of the map psi:
//   Y^i(psi(x,z)) - Y^j(x) d_{x^j} psi^i - tau(x) H^a(z) d_{z^a} psi^i
//                 - C^l(x) K_l^a(z) d_{z^a} psi^i,
// with K_l the gauge generators and H the generator of the time action.
// Vanishing of the residual is sufficient for the flow of V to fix the map;
// necessity additionally assumes the driving noise admits jumps of every
// size, which is recorded as an assumption rather than a verified fact.
struct DeterminingResidualReport {
  std::vector<GridPoint> grid;  // points that were evaluated
  std::vector<Vec> residuals;   // one m-vector per evaluated point
  double sup_norm = 0;
  std::string derivative_mode;  // "analytic" | "finite-difference"
  int flagged = 0;              // points dropped after evaluation errors
  bool necessity_assumes_full_jumps = true;
};

DeterminingResidualReport determining_residual(const CanonicalSdeMap& sde,
                                               const InfinitesimalTransformation& v,
                                               const GaugeAction* gauge, const TimeAction* time,
                                               const std::vector<GridPoint>& grid,
                                               const SdeJacobians* jac = nullptr,
                                               const Vec& parameter = Vec());

// ---------------------------------------------------------------------------
// Finite symmetry check
// ---------------------------------------------------------------------------

// Max |E_T(psi)(x,z) - psi(x,z)| over the grid.  Equality of the
// one-increment maps is the certificate checked here; for continuous noise
// distinct maps can still share every solution, so a failing check refutes
// map equality only, not law-level symmetry.
struct FiniteSymmetryReport {
  double max_deviation = 0;
  double tolerance = 0;
  bool pass = false;
  int flagged = 0;
  std::string certificate = "map-identity";
};

FiniteSymmetryReport finite_symmetry_check(const CanonicalSdeMap& sde,
                                           const StochasticTransformation& t,
                                           const GaugeAction* gauge, const TimeAction* time,
                                           const std::vector<GridPoint>& grid,
                                           double tolerance = 1e-8, const Vec& parameter = Vec());

// ---------------------------------------------------------------------------
// Flow-derivative cross-check
// ---------------------------------------------------------------------------

// Central difference in a of E_{T_a}(psi) at a = 0, with T_a the flow of V.
// An independent evaluation of the determining residual: max_mismatch is the
// sup distance to the residual report computed on the same points.
struct FlowDerivativeReport {
  std::vector<GridPoint> grid;
  std::vector<Vec> derivatives;
  double sup_norm = 0;
  double max_mismatch = 0;
  int flagged = 0;
};

FlowDerivativeReport infinitesimal_via_flow(const CanonicalSdeMap& sde,
                                            const InfinitesimalTransformation& v,
                                            const GaugeAction* gauge, const TimeAction* time,
                                            const std::vector<GridPoint>& grid,
                                            double a_step = 1e-3, const SdeJacobians* jac = nullptr,
                                            const Vec& parameter = Vec());

// ---------------------------------------------------------------------------
// Least-squares symmetry fitting
// ---------------------------------------------------------------------------

// Family of infinitesimal transformations linear in unknown coefficients:
// V(c) = sum_i c_i basis[i].
struct SymmetryAnsatz {
  std::vector<InfinitesimalTransformation> basis;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(basis.size()); }
  InfinitesimalTransformation combine(const Vec& coeffs) const;
};

// Standard ansatz: the m^2 linear fields x^j d_{x^i}, optionally the m
// constant fields d_{x^i}, one constant C per gauge generator, and
// optionally the constant density tau = 1.
SymmetryAnsatz linear_ansatz(int state_dim, int gauge_generators, bool with_constant_y = false,
                             bool with_tau = false);

// Stacks one determining residual per (grid point, state component) into a
// matrix over the ansatz coefficients and extracts its near-null space by
// SVD.  Directions with singular value <= rank_tolerance * sigma_max are the
// fitted symmetries, normalized to unit length with the largest-magnitude
// entry positive.
struct FitSymmetryResult {
  Vec singular_values;              // descending
  std::vector<Vec> null_directions; // coefficient vectors of fitted symmetries
  Vec best_direction;               // right singular vector of sigma_min
  double best_residual = 0;         // sup-norm residual of best_direction
  int rank = 0;
  double rank_tolerance = 0;
  int equations = 0;
  int flagged = 0;
};

FitSymmetryResult fit_symmetry(const CanonicalSdeMap& sde, const SymmetryAnsatz& ansatz,
                               const GaugeAction* gauge, const TimeAction* time,
                               const std::vector<GridPoint>& grid,
                               const SdeJacobians* jac = nullptr, const Vec& parameter = Vec(),
                               double rank_tolerance = 1e-10);

// ---------------------------------------------------------------------------
// JSON summaries
// ---------------------------------------------------------------------------

nlohmann::json to_json(const DeterminingResidualReport& report, bool include_points = false);
nlohmann::json to_json(const FiniteSymmetryReport& report);
nlohmann::json to_json(const FlowDerivativeReport& report, bool include_points = false);
nlohmann::json to_json(const FitSymmetryResult& result);

}  // namespace liesde
