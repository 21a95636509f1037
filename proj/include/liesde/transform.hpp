#pragma once

// Stochastic transformations of processes and equations.
//
// A noise process may admit two kinds of symmetry:
//   * a gauge symmetry: a Lie group G acting on the noise group N by
//     diffeomorphisms Xi_g that preserve the law of the noise when applied
//     with predictable G-valued controls, and
//   * a time symmetry: an R+ action Gamma_r on N that compensates a
//     deterministic-rate time change.
//
// A stochastic transformation T = (Phi, B, eta) combines a state-space
// diffeomorphism Phi, a gauge control map B : M -> G and a time-change
// density eta : M -> R+.  T acts on process pairs (X, Z) ("process action")
// and on increment maps Psi ("equation action"); the two actions are
// intertwined: solving the transformed equation against the transformed
// noise reproduces the transformed solution.

#include <functional>
#include <optional>
#include <vector>

#include "liesde/chart.hpp"
#include "liesde/linalg.hpp"
#include "liesde/path.hpp"
#include "liesde/sde.hpp"

namespace liesde {

// ---------------------------------------------------------------------------
// Group actions on the noise
// ---------------------------------------------------------------------------

// Action Xi_g of a Lie group G (chart `group`) on the noise group N (chart
// `noise`).  `generator(l, z)` is the fundamental vector field K_l of the
// action for the l-th algebra basis element, `upsilon(g)` the linearization
// of Xi_g at the identity of N in chart coordinates, and `o_second(g)` the
// second-order correction used when mapping continuous quadratic variation
// (one symmetric matrix per noise coordinate; null means zero).
struct GaugeAction {
    const LieGroupChart* group = nullptr;
    const LieGroupChart* noise = nullptr;

    std::function<Vec(const Vec& g, const Vec& z)> xi;

    int generators = 0;
    std::function<Vec(int l, const Vec& z)> generator;
    // Algebra basis of G expressed as tangent coordinates at the identity of
    // the `group` chart; defaults to the standard basis when empty.
    std::vector<Vec> algebra_basis;

    std::function<Mat(const Vec& g)> upsilon;
    std::function<std::vector<Mat>(const Vec& g)> o_second;
    // Lie bracket on algebra coefficient vectors; null means abelian.
    std::function<Vec(const Vec&, const Vec&)> algebra_bracket;

    // Structural facts about the action, used to pick exact code paths:
    // `automorphism` means Xi_g is a group automorphism of N, `isometric_log`
    // that Xi_g preserves the norm of logarithmic coordinates.
    bool automorphism = false;
    bool isometric_log = false;

    Mat upsilon_of(const Vec& g) const;
    std::vector<Mat> o_second_of(const Vec& g) const;
    Vec basis_element(int l) const;
    Vec bracket(const Vec& c1, const Vec& c2) const;
};

// Action Gamma_r of the multiplicative group R+ on the noise group N.
// `generator_h(z)` is d/dr Gamma_r(z) at r = 1; `gamma_lin(r)` the
// linearization of Gamma_r at the identity of N; `q_second(r)` the
// second-order correction for continuous quadratic variation (null = zero).
struct TimeAction {
    const LieGroupChart* noise = nullptr;

    std::function<Vec(double r, const Vec& z)> gamma;
    std::function<Vec(const Vec& z)> generator_h;
    std::function<Mat(double r)> gamma_lin;
    std::function<std::vector<Mat>(double r)> q_second;

    Mat gamma_of(double r) const;
    std::vector<Mat> q_second_of(double r) const;
};

// Largest violation of the action axioms over the supplied samples:
// Xi at the group identity must fix every z, and Xi must turn group
// multiplication into composition.
double gauge_action_defect(const GaugeAction& action,
                           const std::vector<Vec>& group_samples,
                           const std::vector<Vec>& noise_samples);

// Largest difference between `upsilon(g)` and a finite-difference
// linearization of Xi_g at the identity of N.
double upsilon_defect(const GaugeAction& action,
                      const std::vector<Vec>& group_samples);

// Same axioms for the R+ action Gamma.
double time_action_defect(const TimeAction& action,
                          const std::vector<double>& rate_samples,
                          const std::vector<Vec>& noise_samples);

// Largest violation of Xi_g(Gamma_r(z)) = Gamma_r(Xi_g(z)).
double commutation_defect(const GaugeAction& gauge, const TimeAction& time,
                          const std::vector<Vec>& group_samples,
                          const std::vector<double>& rate_samples,
                          const std::vector<Vec>& noise_samples);

// Exact rotation matrix; quadrant angles map to the exact signed permutation
// so that controls like a quarter turn act without rounding error.
Mat rot2(double theta);

// Ready-made actions used by the scenarios and tests.
// Rotations of R^2: G = SO(2) acting by Xi_theta(z) = R(theta) z.
GaugeAction rotation_gauge_action_r2();
// Rotations acting on GL(2) x R^2 by conjugation on the linear block and by
// rotation on the translation block.
GaugeAction rotation_gauge_action_gl2r2();
// Scaling action Gamma_r(z) = r^(1/alpha) z on R^n (alpha = 2 for Brownian
// motion, 0 < alpha < 2 for the stable scaling).
TimeAction scaling_time_action(double alpha, const LieGroupChart* noise);

// ---------------------------------------------------------------------------
// Stochastic transformations
// ---------------------------------------------------------------------------

// Invertible smooth change of state coordinates.  `jacobian` is optional;
// when absent a central finite difference is used.
struct Diffeo {
    std::function<Vec(const Vec&)> forward;  // null means the identity map
    std::function<Vec(const Vec&)> inverse;
    std::function<Mat(const Vec&)> jacobian;

    bool is_identity() const { return !forward; }
    Vec fwd(const Vec& x) const;
    Vec inv(const Vec& y) const;
    Mat jac(const Vec& x) const;
};

// T = (Phi, B, eta).  Null `b_map` means B is constantly the group identity;
// null `eta` means the constant density 1 (no time change).  `group` must be
// set whenever `b_map` is present.
struct StochasticTransformation {
    Diffeo phi;
    const LieGroupChart* group = nullptr;
    std::function<Vec(const Vec&)> b_map;
    std::function<double(const Vec&)> eta;
    // Declared bounds for eta values; evaluations outside are rejected.
    double eta_lower = 1e-8;
    double eta_upper = 1e8;

    bool is_strong() const { return !b_map && !eta; }
    Vec b_of(const Vec& x) const;      // group coordinates (requires group)
    double eta_of(const Vec& x) const; // checked against the bounds
};

// Infinitesimal transformation V = (Y, C, tau): a vector field on the state
// space, an algebra-coefficient map C : M -> R^r and a density rate
// tau : M -> R.  Null members mean identically zero.
struct InfinitesimalTransformation {
    int state_dim = 0;
    VectorField y;
    std::function<Vec(const Vec&)> c;
    std::function<double(const Vec&)> tau;

    Vec y_of(const Vec& x) const;
    Vec c_of(const Vec& x, int generators) const;
    double tau_of(const Vec& x) const;
};

// Composition acts like map composition on each slot:
// (T2 o T1) = (Phi2 o Phi1, (B2 o Phi1) * B1, (eta2 o Phi1) * eta1).
StochasticTransformation compose(const StochasticTransformation& outer,
                                 const StochasticTransformation& inner);
StochasticTransformation invert(const StochasticTransformation& t);

// ---------------------------------------------------------------------------
// Action on noise paths
// ---------------------------------------------------------------------------

// Applies Xi with a predictable group-valued control: the control is
// evaluated on the history up to the left endpoint of each step, continuous
// increments are mapped through the linearization (with the second-order
// correction on additive charts, multiplicatively otherwise) and jump marks
// through the full map Xi_g.
SemimartingalePath apply_gauge_to_noise(const SemimartingalePath& path,
                                        const GaugeAction& action,
                                        const PredictableControl& control);

// Same with explicit per-step control values (one group element per step).
SemimartingalePath apply_gauge_steps(const SemimartingalePath& path,
                                     const GaugeAction& action,
                                     const std::vector<Vec>& g_cont,
                                     const std::vector<Vec>* g_jump = nullptr);

// Applies Gamma_r with a predictable positive scalar control (value
// component 0 of the control result).
SemimartingalePath apply_gamma_to_noise(const SemimartingalePath& path,
                                        const TimeAction& action,
                                        const PredictableControl& control,
                                        double lower, double upper);

SemimartingalePath apply_gamma_steps(const SemimartingalePath& path,
                                     const TimeAction& action,
                                     const std::vector<double>& r_cont,
                                     const std::vector<double>* r_jump = nullptr);

// ---------------------------------------------------------------------------
// Time change
// ---------------------------------------------------------------------------

// Absolutely continuous time change beta_t = \int_0^t eta ds with piecewise
// linear interpolation between grid nodes and exact inverse alpha.
struct TimeChange {
    std::vector<double> input_grid;
    std::vector<double> beta; // image times, one per input grid node

    double beta_at(double t) const;
    double alpha_at(double s) const;
};

// Builds the trapezoid integral of the node densities `eta_nodes` (one per
// grid node, values validated against [lower, upper]) and relabels the path
// onto the image grid.  Values and jump marks are carried over unchanged;
// jump times move to their exact images.  A unit density returns the input
// path bitwise.
struct TimeChangedPath {
    SemimartingalePath path;
    TimeChange change;
};
TimeChangedPath apply_time_change(const SemimartingalePath& path,
                                  const std::vector<double>& eta_nodes,
                                  double lower, double upper);

struct TimeChangedSolution {
    SolutionPath path;
    TimeChange change;
};
TimeChangedSolution apply_time_change(const SolutionPath& path,
                                      const std::vector<double>& eta_nodes,
                                      double lower, double upper);

// Cadlag evaluation: value at the largest grid time <= t.
Vec path_value_at(const SemimartingalePath& path, double t);
Vec path_value_at(const SolutionPath& path, double t);

// ---------------------------------------------------------------------------
// Process action and equation action
// ---------------------------------------------------------------------------

// Process action: X' = Phi(X) relabeled by the time change of density
// eta(X_(t-)), Z' the noise with Gamma_{eta(X_(t-))} then Xi_{B(X_(t-))}
// applied stepwise and the same relabeling.  The pair (x, z) must live on a
// common grid (x.grid == z.grid).  Gauge/time actions may be null when the
// corresponding slot of T is null.
struct PActionResult {
    SolutionPath x;
    SemimartingalePath z;
    TimeChange change;
};
PActionResult p_action(const StochasticTransformation& t,
                       const SolutionPath& x, const SemimartingalePath& z,
                       const GaugeAction* gauge, const TimeAction* time);

// Equation action on a canonical increment map:
//   Psi'(x, z) = Phi(Psi(Phi^{-1}(x), Gamma_{1/eta}(Xi_{B^{-1}}(z)))),
// with B and eta evaluated at Phi^{-1}(x).
CanonicalSdeMap e_action(const StochasticTransformation& t,
                         const CanonicalSdeMap& sde,
                         const GaugeAction* gauge, const TimeAction* time);

// ---------------------------------------------------------------------------
// Flows, push-forwards, brackets, rectification
// ---------------------------------------------------------------------------

// Value of the one-parameter group generated by V at parameter a, starting
// from (x, identity, 1):
//   dPhi/da = Y(Phi),  dB/da = R_{B*}(C(Phi)),  deta/da = tau(Phi) eta.
struct FlowPoint {
    Vec x;
    Vec b;      // group coordinates (empty when gauge is null)
    double eta = 1.0;
};
FlowPoint flow_of(const InfinitesimalTransformation& v, double a, const Vec& x,
                  const GaugeAction* gauge, double tol = 1e-10);

// Packages the flow at parameter a as a stochastic transformation.
StochasticTransformation flow_transformation(const InfinitesimalTransformation& v,
                                             double a, const GaugeAction* gauge,
                                             double tol = 1e-10);

// Push-forward of V along T:
//   ( Phi_* Y,
//     (Ad_B(C) + R_{B^{-1}*}(Y(B))) o Phi^{-1},
//     (tau + Y(eta)/eta) o Phi^{-1} ).
InfinitesimalTransformation push_forward(const StochasticTransformation& t,
                                         const InfinitesimalTransformation& v,
                                         const GaugeAction* gauge);

// Bracket on infinitesimal transformations.  `as_printed` evaluates
//   ([Y1,Y2], Y1(C2) - Y2(C2) - {C1,C2}, Y1(tau2) - Y2(tau1))
// exactly as stated by the source formula; `antisymmetrized` replaces the
// middle term with Y1(C2) - Y2(C1) - {C1,C2}.  Both are exposed so tests can
// probe the Jacobi identity and antisymmetry against each variant.
enum class BracketForm { as_printed, antisymmetrized };
InfinitesimalTransformation lie_bracket(const InfinitesimalTransformation& v1,
                                        const InfinitesimalTransformation& v2,
                                        const GaugeAction* gauge,
                                        BracketForm form);

// Residuals of the rectification equations Y_i(B) = -L_{B*}(C_i) and
// Y_i(eta) = -tau_i eta over the sample points.  Points where the maps throw
// a domain error are skipped and counted.
struct RectifyReport {
    double max_b_residual = 0.0;
    double max_eta_residual = 0.0;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
};
RectifyReport rectify_check(const StochasticTransformation& t,
                            const std::vector<InfinitesimalTransformation>& vs,
                            const GaugeAction& gauge,
                            const std::vector<Vec>& points);

// Constructs a rectifying transformation T = (Id, B, eta) for a single
// infinitesimal transformation V with Y(x0) != 0, valid on a flow box around
// x0.  B and eta are obtained by shooting onto the transversal slice through
// x0 orthogonal to Y(x0) (where B = identity, eta = 1) and integrating
//   dB/ds = -L_{B*}(C),  deta/ds = -tau eta
// along the flow of Y.
StochasticTransformation rectify_single(const InfinitesimalTransformation& v,
                                        const Vec& x0, const GaugeAction& gauge,
                                        double tol = 1e-10);

} // namespace liesde
