#include "liesde/symmetry.hpp"

#include <cmath>

#include "doctest.h"
#include "liesde/transform.hpp"

using namespace liesde;

namespace {

Vec vec1(double a) {
  Vec v(1);
  v << a;
  return v;
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Affine map psi(x, dz) = M(dz) x + v(dz) over the GL(2) x R^2 noise group
// (row-major matrix block first), with its exact Jacobians.
CanonicalSdeMap affine_gl2r2_sde() {
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

SdeJacobians affine_gl2r2_jacobians() {
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

// The rotation symmetry of the affine map: Y = (-x^2, x^1), C = 1.
InfinitesimalTransformation rotation_symmetry() {
  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(-x[1], x[0]); };
  v.c = [](const Vec&) { return vec1(1.0); };
  return v;
}

InfinitesimalTransformation stretch_non_symmetry() {
  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(x[0], 0.0); };
  return v;
}

std::vector<GridPoint> default_affine_grid() {
  return symmetry_grid(SymmetryGridSpec{}, 2, shared_gl_rm_chart(2, 2));
}

}  // namespace

TEST_CASE("default grid has the documented layout and is deterministic") {
  SymmetryGridSpec spec;
  const LieGroupChart& noise = shared_gl_rm_chart(2, 2);
  auto grid = symmetry_grid(spec, 2, noise);
  // 5^2 tensor states x 5 noise elements + 50 joint points
  CHECK(grid.size() == 25 * 5 + 50);
  for (const auto& [x, z] : grid) {
    REQUIRE(x.size() == 2);
    REQUIRE(z.size() == 6);
    CHECK(x.minCoeff() >= -2.0);
    CHECK(x.maxCoeff() <= 2.0);
    CHECK(noise.contains(z));
  }
  auto again = symmetry_grid(spec, 2, noise);
  REQUIRE(again.size() == grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(bitwise_equal(grid[i].first, again[i].first));
    CHECK(bitwise_equal(grid[i].second, again[i].second));
  }
  // a state away from the identity element of the noise appears
  bool nontrivial_noise = false;
  for (const auto& p : grid)
    nontrivial_noise = nontrivial_noise || (p.second - noise.identity).lpNorm<Eigen::Infinity>() > 0.2;
  CHECK(nontrivial_noise);
}

TEST_CASE("grid falls back to a low-discrepancy state set in high dimension") {
  SymmetryGridSpec spec;
  spec.max_tensor_states = 100;  // 5^4 = 625 would exceed this
  auto grid = symmetry_grid(spec, 4, shared_additive_chart(3));
  CHECK(grid.size() == 100 * 5 + 50);
  for (const auto& [x, z] : grid) {
    CHECK(x.size() == 4);
    CHECK(x.minCoeff() >= -2.0);
    CHECK(x.maxCoeff() <= 2.0);
    CHECK(z.size() == 3);
  }
}

TEST_CASE("filter_grid drops states outside the SDE domain") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  sde.state_domain = [](const Vec& x) { return x[0] > 0; };
  auto grid = filter_grid(sde, default_affine_grid());
  CHECK(!grid.empty());
  for (const auto& p : grid) CHECK(p.first[0] > 0);
  CHECK(grid.size() < default_affine_grid().size());
}

TEST_CASE("zero transformation has identically zero residual") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  InfinitesimalTransformation zero;
  zero.state_dim = 2;
  auto report = determining_residual(sde, zero, &gauge, nullptr, default_affine_grid());
  CHECK(report.sup_norm == 0.0);
  CHECK(report.flagged == 0);
  CHECK(report.derivative_mode == "finite-difference");
  CHECK(report.necessity_assumes_full_jumps);
}

TEST_CASE("rotation generator solves the determining equations of the affine map") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  auto grid = default_affine_grid();

  auto analytic = determining_residual(sde, rotation_symmetry(), &gauge, nullptr, grid, &jac);
  CHECK(analytic.derivative_mode == "analytic");
  CHECK(analytic.flagged == 0);
  CHECK(analytic.grid.size() == grid.size());
  CHECK(analytic.sup_norm < 1e-9);

  auto fd = determining_residual(sde, rotation_symmetry(), &gauge, nullptr, grid);
  CHECK(fd.derivative_mode == "finite-difference");
  CHECK(fd.sup_norm < 1e-5);
}

TEST_CASE("stretch field is far from solving the determining equations") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  auto report =
      determining_residual(sde, stretch_non_symmetry(), &gauge, nullptr, default_affine_grid(), &jac);
  CHECK(report.sup_norm > 0.1);
}

TEST_CASE("determining residual is linear in the transformation") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  auto grid = default_affine_grid();

  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(0.3 * x[0] - x[1], x[0] * x[0]); };
  v.c = [](const Vec& x) { return vec1(0.5 + 0.1 * x[1]); };
  InfinitesimalTransformation doubled;
  doubled.state_dim = 2;
  doubled.y = [](const Vec& x) { return Vec(2.0 * vec2(0.3 * x[0] - x[1], x[0] * x[0])); };
  doubled.c = [](const Vec& x) { return Vec(2.0 * vec1(0.5 + 0.1 * x[1])); };

  auto one = determining_residual(sde, v, &gauge, nullptr, grid, &jac);
  auto two = determining_residual(sde, doubled, &gauge, nullptr, grid, &jac);
  REQUIRE(one.residuals.size() == two.residuals.size());
  for (std::size_t i = 0; i < one.residuals.size(); ++i)
    CHECK((two.residuals[i] - 2.0 * one.residuals[i]).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("evaluation errors flag points instead of aborting") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  sde.psi = [base = affine_gl2r2_sde().psi](const Vec& x, const Vec& dz, const Vec& k) {
    if (x[0] < -1.5) throw DomainError("probe outside the chart");
    return base(x, dz, k);
  };
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  auto report =
      determining_residual(sde, rotation_symmetry(), &gauge, nullptr, default_affine_grid());
  CHECK(report.flagged > 0);
  CHECK(report.grid.size() + report.flagged == default_affine_grid().size());
  CHECK(report.sup_norm < 1e-5);
}

TEST_CASE("identity transformation passes the finite check with zero deviation") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  StochasticTransformation identity;
  identity.group = gauge.group;
  auto report = finite_symmetry_check(sde, identity, &gauge, nullptr, default_affine_grid());
  CHECK(report.max_deviation == 0.0);
  CHECK(report.pass);
  CHECK(report.certificate == "map-identity");
}

TEST_CASE("finite rotations leave the affine map unchanged") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  for (double a : {0.3, 0.7, 1.5}) {
    StochasticTransformation t;
    t.group = gauge.group;
    t.phi.forward = [a](const Vec& x) { return Vec(rot2(a) * x); };
    t.phi.inverse = [a](const Vec& x) { return Vec(rot2(-a) * x); };
    t.b_map = [a](const Vec&) { return vec1(a); };
    auto report = finite_symmetry_check(sde, t, &gauge, nullptr, default_affine_grid());
    CHECK(report.pass);
    CHECK(report.max_deviation < 1e-8);
    CHECK(report.flagged == 0);
  }
}

TEST_CASE("translation is not a symmetry of the affine map") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  StochasticTransformation t;
  t.group = gauge.group;
  t.phi.forward = [](const Vec& x) { return Vec(x + vec2(1, 0)); };
  t.phi.inverse = [](const Vec& x) { return Vec(x - vec2(1, 0)); };
  auto report = finite_symmetry_check(sde, t, &gauge, nullptr, default_affine_grid());
  CHECK(!report.pass);
  CHECK(report.max_deviation > 0.1);
}

TEST_CASE("flow of a zero-residual field passes the finite check at unit scale") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  for (double a : {0.3, 1.0}) {
    StochasticTransformation t = flow_transformation(rotation_symmetry(), a, &gauge);
    auto report =
        finite_symmetry_check(sde, t, &gauge, nullptr, default_affine_grid(), 1e-6);
    CHECK(report.pass);
    CHECK(report.max_deviation <= 1e-6);
  }
}

TEST_CASE("flow derivative of the equation action vanishes on the symmetry") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  InfinitesimalTransformation zero;
  zero.state_dim = 2;
  auto trivial =
      infinitesimal_via_flow(sde, zero, &gauge, nullptr, default_affine_grid(), 1e-3, &jac);
  CHECK(trivial.sup_norm == 0.0);

  auto report = infinitesimal_via_flow(sde, rotation_symmetry(), &gauge, nullptr,
                                       default_affine_grid(), 1e-3, &jac);
  CHECK(report.flagged == 0);
  CHECK(report.sup_norm < 1e-6);
  CHECK(report.max_mismatch < 1e-6);
}

TEST_CASE("flow derivative matches the residual on a non-symmetry") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  auto report = infinitesimal_via_flow(sde, stretch_non_symmetry(), &gauge, nullptr,
                                       default_affine_grid(), 1e-3, &jac);
  CHECK(report.sup_norm > 0.1);  // the non-symmetry shows up in the derivative
  CHECK(report.max_mismatch < 1e-4);
}

TEST_CASE("parameter vector is forwarded to the map") {
  CanonicalSdeMap sde;
  sde.state_dim = 1;
  sde.noise_chart = &shared_additive_chart(1);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec& k) {
    return Vec(x + (k.size() ? k[0] : 1.0) * dz);
  };
  InfinitesimalTransformation v;
  v.state_dim = 1;
  v.y = [](const Vec& x) { return Vec(x); };
  std::vector<GridPoint> grid{{vec1(1.0), vec1(0.5)}, {vec1(-0.5), vec1(0.25)}};
  auto plain = determining_residual(sde, v, nullptr, nullptr, grid);
  auto scaled = determining_residual(sde, v, nullptr, nullptr, grid, nullptr, vec1(2.0));
  // residual = k * dz here, so doubling k doubles the residual
  CHECK(scaled.sup_norm == doctest::Approx(2.0 * plain.sup_norm).epsilon(1e-8));
}

TEST_CASE("least-squares fit recovers the rotation symmetry direction") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  SymmetryAnsatz ansatz = linear_ansatz(2, 1);
  REQUIRE(ansatz.size() == 5);

  auto fit = fit_symmetry(sde, ansatz, &gauge, nullptr, default_affine_grid(), &jac);
  CHECK(fit.equations == (int)default_affine_grid().size() * 2);
  CHECK(fit.rank == 4);
  REQUIRE(fit.null_directions.size() == 1);
  CHECK(fit.best_residual < 1e-8);

  // basis order: Y^0=x^0, Y^0=x^1, Y^1=x^0, Y^1=x^1, C; the symmetry is
  // (0,-1,1,0 | 1)/sqrt(3) up to overall sign
  Vec expected(5);
  expected << 0, -1, 1, 0, 1;
  expected /= expected.norm();
  double dist = std::min((fit.null_directions[0] - expected).norm(),
                         (fit.null_directions[0] + expected).norm());
  CHECK(dist < 1e-7);

  // the fitted direction reproduces a near-zero residual through combine()
  auto fitted = ansatz.combine(fit.null_directions[0]);
  auto report = determining_residual(sde, fitted, &gauge, nullptr, default_affine_grid(), &jac);
  CHECK(report.sup_norm < 1e-8);
}

TEST_CASE("translation-invariant map yields a constant-field null direction") {
  CanonicalSdeMap sde;
  sde.state_dim = 1;
  sde.noise_chart = &shared_additive_chart(1);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec&) { return Vec(x + dz); };
  SymmetryAnsatz ansatz = linear_ansatz(1, 0, /*with_constant_y=*/true);
  REQUIRE(ansatz.size() == 2);

  auto grid = symmetry_grid(SymmetryGridSpec{}, 1, shared_additive_chart(1));
  auto fit = fit_symmetry(sde, ansatz, nullptr, nullptr, grid);
  REQUIRE(fit.null_directions.size() == 1);
  Vec expected(2);
  expected << 0, 1;  // Y = d/dx
  CHECK((fit.null_directions[0] - expected).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(fit.rank == 1);
}

TEST_CASE("ansatz orthogonal to every symmetry leaves a strictly positive residual") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  SymmetryAnsatz full = linear_ansatz(2, 1);

  // coefficient directions orthogonal to the null direction (0,-1,1,0,1)
  std::vector<Vec> directions;
  for (auto&& entries : {std::initializer_list<double>{1, 0, 0, 0, 0},
                         {0, 0, 0, 1, 0},
                         {0, 1, 1, 0, 0},
                         {0, 1, 0, 0, 1}}) {
    Vec d(5);
    int i = 0;
    for (double e : entries) d[i++] = e;
    directions.push_back(d);
  }
  SymmetryAnsatz orthogonal;
  for (const Vec& d : directions) {
    orthogonal.basis.push_back(full.combine(d));
    orthogonal.labels.push_back("combined");
  }

  auto fit = fit_symmetry(sde, orthogonal, &gauge, nullptr, default_affine_grid(), &jac);
  CHECK(fit.null_directions.empty());
  CHECK(fit.rank == 4);
  CHECK(fit.best_residual > 1e-3);
}

TEST_CASE("fit requires at least as many equations as coefficients") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  std::vector<GridPoint> tiny{{vec2(1, 0), shared_gl_rm_chart(2, 2).identity}};
  CHECK_THROWS_AS(fit_symmetry(sde, linear_ansatz(2, 1), &gauge, nullptr, tiny),
                  std::invalid_argument);
}

TEST_CASE("symmetries of the shift map form an algebra under the bracket") {
  // psi(x, dz) = x + dz e_1 on R^3: the symmetries include the rotation in
  // the (x^2, x^3) plane and the constant shift along x^2, whose bracket is
  // the constant shift along x^3 — again a symmetry.
  CanonicalSdeMap sde;
  sde.state_dim = 3;
  sde.noise_chart = &shared_additive_chart(1);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec&) {
    Vec out = x;
    out[0] += dz[0];
    return out;
  };
  InfinitesimalTransformation v1;
  v1.state_dim = 3;
  v1.y = [](const Vec& x) {
    Vec out(3);
    out << 0, -x[2], x[1];
    return out;
  };
  InfinitesimalTransformation v2;
  v2.state_dim = 3;
  v2.y = [](const Vec&) {
    Vec out(3);
    out << 0, 1, 0;
    return out;
  };

  auto grid = symmetry_grid(SymmetryGridSpec{}, 3, shared_additive_chart(1));
  auto r1 = determining_residual(sde, v1, nullptr, nullptr, grid);
  auto r2 = determining_residual(sde, v2, nullptr, nullptr, grid);
  CHECK(r1.sup_norm < 1e-9);
  CHECK(r2.sup_norm < 1e-9);

  InfinitesimalTransformation br = lie_bracket(v1, v2, nullptr, BracketForm::as_printed);
  Vec probe3(3);
  probe3 << 0.7, -1.1, 0.4;
  CHECK((br.y_of(probe3) - Vec(-Vec::Unit(3, 2))).lpNorm<Eigen::Infinity>() < 1e-7);
  auto rb = determining_residual(sde, br, nullptr, nullptr, grid);
  CHECK(rb.sup_norm < 1e-6);

  // sanity contrast: a non-symmetry has a visible residual on the same grid
  InfinitesimalTransformation bad;
  bad.state_dim = 3;
  bad.y = [](const Vec& x) {
    Vec out(3);
    out << 0, x[0], 0;
    return out;
  };
  CHECK(determining_residual(sde, bad, nullptr, nullptr, grid).sup_norm > 0.05);
}

TEST_CASE("report serialization carries summaries and optional points") {
  CanonicalSdeMap sde = affine_gl2r2_sde();
  GaugeAction gauge = rotation_gauge_action_gl2r2();
  SdeJacobians jac = affine_gl2r2_jacobians();
  auto grid = default_affine_grid();
  auto report = determining_residual(sde, rotation_symmetry(), &gauge, nullptr, grid, &jac);

  nlohmann::json summary = to_json(report);
  CHECK(summary["sup_norm"].get<double>() < 1e-9);
  CHECK(summary["derivative_mode"] == "analytic");
  CHECK(summary["evaluated"].get<std::size_t>() == grid.size());
  CHECK(summary["necessity_assumes_full_jumps"].get<bool>());
  CHECK(!summary.contains("points"));

  nlohmann::json detailed = to_json(report, true);
  REQUIRE(detailed.contains("points"));
  CHECK(detailed["points"].size() == grid.size());
  CHECK(detailed["points"][0]["x"].size() == 2);
  CHECK(detailed["points"][0]["z"].size() == 6);
  CHECK(detailed["points"][0]["residual"].size() == 2);

  StochasticTransformation identity;
  identity.group = gauge.group;
  nlohmann::json finite = to_json(finite_symmetry_check(sde, identity, &gauge, nullptr, grid));
  CHECK(finite["pass"].get<bool>());
  CHECK(finite["certificate"] == "map-identity");

  auto flow = infinitesimal_via_flow(sde, rotation_symmetry(), &gauge, nullptr, grid, 1e-3, &jac);
  nlohmann::json flow_json = to_json(flow);
  CHECK(flow_json["max_mismatch"].get<double>() < 1e-6);

  auto fit = fit_symmetry(sde, linear_ansatz(2, 1), &gauge, nullptr, grid, &jac);
  nlohmann::json fit_json = to_json(fit);
  CHECK(fit_json["singular_values"].size() == 5);
  CHECK(fit_json["null_directions"].size() == 1);
}
