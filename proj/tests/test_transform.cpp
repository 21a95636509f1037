#include "doctest.h"

#include <cmath>
#include <vector>

#include "liesde/noise.hpp"
#include "liesde/sde.hpp"
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

bool same_vec(const Vec& a, const Vec& b) { return bitwise_equal(a, b); }

double max_state_diff(const SolutionPath& a, const SolutionPath& b) {
  REQUIRE(a.states.size() == b.states.size());
  double worst = 0;
  for (std::size_t k = 0; k < a.states.size(); ++k)
    worst = std::max(worst, (a.states[k] - b.states[k]).lpNorm<Eigen::Infinity>());
  return worst;
}

bool bitwise_paths(const SemimartingalePath& a, const SemimartingalePath& b) {
  if (a.grid != b.grid) return false;
  if (a.values.size() != b.values.size() || a.cont_increments.size() != b.cont_increments.size())
    return false;
  for (std::size_t k = 0; k < a.values.size(); ++k)
    if (!bitwise_equal(a.values[k], b.values[k])) return false;
  for (std::size_t k = 0; k < a.cont_increments.size(); ++k)
    if (!bitwise_equal(a.cont_increments[k], b.cont_increments[k])) return false;
  if (a.jumps.size() != b.jumps.size()) return false;
  for (std::size_t j = 0; j < a.jumps.size(); ++j) {
    if (a.jumps[j].index != b.jumps[j].index || a.jumps[j].time != b.jumps[j].time) return false;
    if (!bitwise_equal(a.jumps[j].jump.value, b.jumps[j].jump.value)) return false;
  }
  return true;
}

// Planar Levy noise with drift, diffusion and compound Poisson jumps.
SemimartingalePath make_levy2(double horizon, double step, std::uint64_t seed) {
  LevyTriplet trip;
  trip.chart = &shared_additive_chart(2);
  trip.b0 = vec2(0.1, -0.2);
  trip.A0 = 0.5 * Mat::Identity(2, 2);
  trip.jump_intensity = 3.0;
  trip.jump_sampler = [](Rng& rng) {
    double angle = rng.uniform(0.0, 2 * M_PI);
    double radius = 0.3 + 0.4 * rng.uniform01();
    return vec2(radius * std::cos(angle), radius * std::sin(angle));
  };
  return sample_levy(trip, horizon, step, seed);
}

// Diagonal-dominant state-dependent diffusion on R^2.
CanonicalSdeMap make_sigma_sde() {
  CanonicalSdeMap sde;
  sde.state_dim = 2;
  sde.noise_chart = &shared_additive_chart(2);
  sde.psi = [](const Vec& x, const Vec& dz, const Vec&) {
    Mat sigma(2, 2);
    sigma << 1 + 0.25 * std::sin(x[1]), 0.1, 0.0, 1 + 0.25 * std::cos(x[0]);
    return Vec(x + sigma * dz);
  };
  return sde;
}

// Exact-in-floating-point diffeomorphism (negation, swap, power-of-two scale).
Diffeo exact_diffeo() {
  Diffeo phi;
  phi.forward = [](const Vec& x) { return vec2(-2 * x[1], 0.5 * x[0]); };
  phi.inverse = [](const Vec& y) { return vec2(2 * y[1], -0.5 * y[0]); };
  return phi;
}

InfinitesimalTransformation rotation_generator() {
  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(-x[1], x[0]); };
  v.c = [](const Vec&) { return vec1(1.0); };
  return v;
}

std::vector<Vec> annulus_points() {
  std::vector<Vec> pts;
  for (double rho : {0.7, 1.0, 1.6})
    for (double th : {0.1, 0.9, 2.0, -1.3, 2.9})
      pts.push_back(vec2(rho * std::cos(th), rho * std::sin(th)));
  return pts;
}

} // namespace

TEST_CASE("rotation gauge actions satisfy the group action axioms") {
  for (const GaugeAction& action : {rotation_gauge_action_r2(), rotation_gauge_action_gl2r2()}) {
    std::vector<Vec> gs = {vec1(0.0), vec1(0.7), vec1(-1.9), vec1(M_PI_2)};
    std::vector<Vec> zs;
    Rng rng(17);
    for (int i = 0; i < 5; ++i) zs.push_back(action.noise->identity + 0.3 * rng.normal_vec(action.noise->dim));
    CHECK(gauge_action_defect(action, gs, zs) <= 1e-10);
    CHECK(upsilon_defect(action, gs) <= 1e-6);

    // The generator is the a-derivative of the action along the one-parameter
    // subgroup a -> Xi_{exp(a K)}.
    for (const Vec& z : zs) {
      double h = 1e-5;
      Vec fd = (action.xi(vec1(h), z) - action.xi(vec1(-h), z)) / (2 * h);
      CHECK((fd - action.generator(0, z)).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
  }
}

TEST_CASE("scaling time action axioms and commutation with rotations") {
  const LieGroupChart& chart = shared_additive_chart(2);
  TimeAction time = scaling_time_action(1.5, &chart);
  std::vector<double> rates = {0.25, 1.0, 1.7, 4.0};
  std::vector<Vec> zs = {vec2(0.3, -0.8), vec2(-1.2, 0.4), vec2(0.0, 0.0)};
  CHECK(time_action_defect(time, rates, zs) <= 1e-10);

  GaugeAction gauge = rotation_gauge_action_r2();
  std::vector<Vec> gs = {vec1(0.4), vec1(-2.2), vec1(M_PI_2)};
  CHECK(commutation_defect(gauge, time, gs, rates, zs) <= 1e-12);

  // gamma_lin matches a finite-difference linearization at the identity.
  Mat lin = time.gamma_of(1.7);
  for (int c = 0; c < 2; ++c) {
    Vec e = Vec::Unit(2, c);
    Vec fd = (time.gamma(1.7, Vec(1e-6 * e)) - time.gamma(1.7, Vec(-1e-6 * e))) / 2e-6;
    CHECK((fd - lin.col(c)).lpNorm<Eigen::Infinity>() <= 1e-8);
  }
}

TEST_CASE("gauge transform with identity control preserves the path bitwise") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 2024);
  GaugeAction gauge = rotation_gauge_action_r2();
  PredictableControl control{[](const PathView&) { return vec1(0.0); }};
  SemimartingalePath moved = apply_gauge_to_noise(z, gauge, control);
  CHECK(bitwise_paths(z, moved));
}

TEST_CASE("quarter-turn gauge control rotates a jump path exactly") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 99);
  REQUIRE(!z.jumps.empty());
  GaugeAction gauge = rotation_gauge_action_r2();
  PredictableControl control{[](const PathView&) { return vec1(M_PI_2); }};
  SemimartingalePath moved = apply_gauge_to_noise(z, gauge, control);

  for (std::size_t k = 0; k < z.values.size(); ++k)
    CHECK(same_vec(moved.values[k], vec2(-z.values[k][1], z.values[k][0])));
  for (std::size_t j = 0; j < z.jumps.size(); ++j) {
    const Vec& old = z.jumps[j].jump.value;
    CHECK(same_vec(moved.jumps[j].jump.value, vec2(-old[1], old[0])));
  }
}

TEST_CASE("history-dependent rotation of brownian motion preserves second moments") {
  const int paths = 4000;
  const double horizon = 1.0;
  const int steps = 64;
  double sum1 = 0, sum2 = 0, sq1 = 0, sq2 = 0, cross = 0;
  GaugeAction gauge = rotation_gauge_action_r2();
  PredictableControl control{[](const PathView& view) {
    // Angle built from the observable past only.
    return vec1(2.0 * view.value()[0] + 0.5 * view.time());
  }};
  for (int p = 0; p < paths; ++p) {
    SemimartingalePath w = sample_brownian(2, horizon, horizon / steps, Rng(5150, p).next_u64());
    SemimartingalePath moved = apply_gauge_to_noise(w, gauge, control);

    // A predictable rotation preserves quadratic variation up to rounding.
    double qv = 0, qv_moved = 0;
    for (std::size_t k = 0; k < w.steps(); ++k) {
      qv += w.cont_increments[k].squaredNorm();
      qv_moved += moved.cont_increments[k].squaredNorm();
    }
    CHECK(std::abs(qv - qv_moved) <= 1e-10 * (1 + qv));

    const Vec& end = moved.values.back();
    sum1 += end[0];
    sum2 += end[1];
    sq1 += end[0] * end[0];
    sq2 += end[1] * end[1];
    cross += end[0] * end[1];
  }
  double inv = 1.0 / paths;
  double se_mean = std::sqrt(horizon * inv);
  double se_var = horizon * std::sqrt(2.0 * inv);
  CHECK(std::abs(sum1 * inv) <= 5 * se_mean);
  CHECK(std::abs(sum2 * inv) <= 5 * se_mean);
  CHECK(std::abs(sq1 * inv - horizon) <= 5 * se_var);
  CHECK(std::abs(sq2 * inv - horizon) <= 5 * se_var);
  CHECK(std::abs(cross * inv) <= 5 * horizon * std::sqrt(inv));
}

TEST_CASE("scaling transform acts on increments and jumps") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 32, 7);
  REQUIRE(!z.jumps.empty());
  const LieGroupChart& chart = shared_additive_chart(2);
  TimeAction time = scaling_time_action(2.0, &chart);

  SUBCASE("unit rate is bitwise") {
    std::vector<double> ones(z.steps(), 1.0);
    SemimartingalePath moved = apply_gamma_steps(z, time, ones, nullptr);
    CHECK(bitwise_paths(z, moved));
  }

  SUBCASE("constant rate four doubles everything") {
    std::vector<double> fours(z.steps(), 4.0);
    SemimartingalePath moved = apply_gamma_steps(z, time, fours, nullptr);
    for (std::size_t k = 0; k < z.steps(); ++k)
      CHECK(same_vec(moved.cont_increments[k], Vec(2.0 * z.cont_increments[k])));
    for (std::size_t j = 0; j < z.jumps.size(); ++j)
      CHECK(same_vec(moved.jumps[j].jump.value, Vec(2.0 * z.jumps[j].jump.value)));
  }

  SUBCASE("controls outside the declared bounds are rejected") {
    PredictableControl control{[](const PathView&) { return vec1(100.0); }};
    CHECK_THROWS_AS(apply_gamma_to_noise(z, time, control, 0.5, 2.0), DomainError);
  }
}

TEST_CASE("time change with unit density returns the path bitwise") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 32, 31);
  std::vector<double> ones(z.grid.size(), 1.0);
  TimeChangedPath out = apply_time_change(z, ones, 0.5, 2.0);
  CHECK(bitwise_paths(z, out.path));
  CHECK(out.change.beta == z.grid);
}

TEST_CASE("constant density time change dilates the grid and relocates jumps exactly") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 32, 31);
  REQUIRE(!z.jumps.empty());
  std::vector<double> twos(z.grid.size(), 2.0);
  TimeChangedPath out = apply_time_change(z, twos, 1.0, 4.0);

  for (std::size_t k = 0; k < z.grid.size(); ++k) {
    CHECK(out.path.grid[k] == doctest::Approx(2.0 * z.grid[k]).epsilon(1e-12));
    CHECK(same_vec(out.path.values[k], z.values[k]));
  }
  for (const JumpMark& mark : out.path.jumps) CHECK(mark.time == out.path.grid[mark.index]);
  // The relabeled path still replays consistently.
  out.path.check_consistency();
  // beta and alpha are inverse interpolants.
  for (double t : {0.05, 0.41, 0.93})
    CHECK(out.change.alpha_at(out.change.beta_at(t)) == doctest::Approx(t).epsilon(1e-12));
}

TEST_CASE("time change round trip recovers the original grid within quadrature error") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 128, 63);
  std::vector<double> eta(z.grid.size()), inv_eta(z.grid.size());
  for (std::size_t k = 0; k < z.grid.size(); ++k) {
    eta[k] = 1.0 + 0.4 * std::sin(3.0 * z.grid[k]);
    inv_eta[k] = 1.0 / eta[k];
  }
  TimeChangedPath fwd = apply_time_change(z, eta, 0.5, 2.0);
  TimeChangedPath back = apply_time_change(fwd.path, inv_eta, 0.4, 2.5);
  double worst = 0;
  for (std::size_t k = 0; k < z.grid.size(); ++k) {
    worst = std::max(worst, std::abs(back.path.grid[k] - z.grid[k]));
    CHECK(same_vec(back.path.values[k], z.values[k]));
  }
  CHECK(worst <= 1.0 / 128);
}

TEST_CASE("process action with the identity transformation is bitwise") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 404);
  CanonicalSdeMap sde = make_sigma_sde();
  SolutionPath x = solve_increment_map(sde, z, vec2(0.4, -0.1));

  StochasticTransformation t; // all slots null
  PActionResult out = p_action(t, x, z, nullptr, nullptr);
  CHECK(bitwise_paths(z, out.z));
  CHECK(max_state_diff(x, out.x) == 0.0);
  CHECK(out.x.grid == x.grid);
}

TEST_CASE("strong process action maps states and leaves the noise bitwise") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 405);
  CanonicalSdeMap sde = make_sigma_sde();
  SolutionPath x = solve_increment_map(sde, z, vec2(0.4, -0.1));
  REQUIRE(!x.jumps.empty());

  StochasticTransformation t;
  t.phi = exact_diffeo();
  PActionResult out = p_action(t, x, z, nullptr, nullptr);
  CHECK(bitwise_paths(z, out.z));
  for (std::size_t k = 0; k < x.states.size(); ++k)
    CHECK(same_vec(out.x.states[k], t.phi.fwd(x.states[k])));
  for (std::size_t j = 0; j < x.jumps.size(); ++j) {
    CHECK(out.x.jumps[j].first == x.jumps[j].first);
    CHECK(same_vec(out.x.jumps[j].second, t.phi.fwd(x.jumps[j].second)));
  }
}

TEST_CASE("process and equation actions intertwine bitwise for a strong transformation") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 406);
  CanonicalSdeMap sde = make_sigma_sde();
  SolutionPath x = solve_increment_map(sde, z, vec2(0.4, -0.1));

  StochasticTransformation t;
  t.phi = exact_diffeo();
  PActionResult moved = p_action(t, x, z, nullptr, nullptr);
  CanonicalSdeMap sde2 = e_action(t, sde, nullptr, nullptr);
  SolutionPath resolved = solve_increment_map(sde2, moved.z, t.phi.fwd(vec2(0.4, -0.1)));

  CHECK(resolved.grid == moved.x.grid);
  CHECK(max_state_diff(resolved, moved.x) == 0.0);
}

TEST_CASE("process and equation actions intertwine bitwise with a quadrant gauge control") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 407);
  REQUIRE(!z.jumps.empty());
  CanonicalSdeMap sde = make_sigma_sde();
  SolutionPath x = solve_increment_map(sde, z, vec2(0.4, -0.1));

  GaugeAction gauge = rotation_gauge_action_r2();
  StochasticTransformation t;
  t.phi = exact_diffeo();
  t.group = gauge.group;
  t.b_map = [](const Vec& s) { return vec1(s[0] >= 0 ? M_PI_2 : -M_PI_2); };

  PActionResult moved = p_action(t, x, z, &gauge, nullptr);
  CanonicalSdeMap sde2 = e_action(t, sde, &gauge, nullptr);
  SolutionPath resolved = solve_increment_map(sde2, moved.z, t.phi.fwd(vec2(0.4, -0.1)));

  CHECK(resolved.grid == moved.x.grid);
  CHECK(max_state_diff(resolved, moved.x) == 0.0);
}

TEST_CASE("process and equation actions intertwine within rounding with a time density") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 408);
  REQUIRE(!z.jumps.empty());
  CanonicalSdeMap sde = make_sigma_sde();
  Vec x0 = vec2(0.4, -0.1);
  SolutionPath x = solve_increment_map(sde, z, x0);

  TimeAction time = scaling_time_action(2.0, &shared_additive_chart(2));
  StochasticTransformation t;
  t.phi = exact_diffeo();
  t.eta = [](const Vec& s) { return 1.5 + 0.5 * std::tanh(s[0]); };
  t.eta_lower = 1.0;
  t.eta_upper = 2.0;

  PActionResult moved = p_action(t, x, z, nullptr, &time);
  CanonicalSdeMap sde2 = e_action(t, sde, nullptr, &time);
  SolutionPath resolved = solve_increment_map(sde2, moved.z, t.phi.fwd(x0));

  CHECK(resolved.grid == moved.x.grid); // both carry the transformed labels
  CHECK(moved.x.grid != z.grid);        // the labels really moved
  CHECK(max_state_diff(resolved, moved.x) <= 1e-11);
}

TEST_CASE("composition and inversion act slotwise") {
  GaugeAction gauge = rotation_gauge_action_r2();

  StochasticTransformation t1;
  t1.phi.forward = [](const Vec& x) { return Vec(x.array() + 1.0); };
  t1.phi.inverse = [](const Vec& y) { return Vec(y.array() - 1.0); };
  t1.group = gauge.group;
  t1.b_map = [](const Vec& x) { return vec1(0.2 + 0.1 * x[0]); };
  t1.eta = [](const Vec& x) { return 1.0 + 0.25 * std::tanh(x[1]); };
  t1.eta_lower = 0.5;
  t1.eta_upper = 2.0;

  StochasticTransformation t2;
  t2.phi.forward = [](const Vec& x) { return Vec(2.0 * x); };
  t2.phi.inverse = [](const Vec& y) { return Vec(0.5 * y); };
  t2.group = gauge.group;
  t2.b_map = [](const Vec& x) { return vec1(-0.4 * x[1]); };
  t2.eta = [](const Vec&) { return 2.0; };
  t2.eta_lower = 2.0;
  t2.eta_upper = 2.0;

  StochasticTransformation both = compose(t2, t1);
  Vec x = vec2(3.0, -0.7);
  CHECK(same_vec(both.phi.fwd(x), t2.phi.fwd(t1.phi.fwd(x))));
  CHECK(same_vec(both.phi.fwd(vec2(3.0, 3.0)), vec2(8.0, 8.0))); // 2(x+1)
  CHECK(both.b_of(x)[0] ==
        doctest::Approx(gauge.group->multiply(t2.b_of(t1.phi.fwd(x)), t1.b_of(x))[0])
            .epsilon(1e-15));
  CHECK(both.eta_of(x) == doctest::Approx(t2.eta_of(t1.phi.fwd(x)) * t1.eta_of(x)).epsilon(1e-15));

  StochasticTransformation round = compose(invert(t1), t1);
  for (const Vec& p : annulus_points()) {
    CHECK((round.phi.fwd(p) - p).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(std::abs(round.b_of(p)[0]) <= 1e-12);
    CHECK(std::abs(round.eta_of(p) - 1.0) <= 1e-12);
  }
}

TEST_CASE("equation action round trip recovers the map") {
  GaugeAction gauge = rotation_gauge_action_r2();
  TimeAction time = scaling_time_action(2.0, &shared_additive_chart(2));
  CanonicalSdeMap sde = make_sigma_sde();

  StochasticTransformation t;
  t.phi.forward = [](const Vec& x) { return vec2(x[0] + 0.1 * std::sin(x[1]), x[1]); };
  t.phi.inverse = [](const Vec& y) { return vec2(y[0] - 0.1 * std::sin(y[1]), y[1]); };
  t.group = gauge.group;
  t.b_map = [](const Vec& x) { return vec1(0.3 * x[0] - 0.2 * x[1]); };
  t.eta = [](const Vec& x) { return 1.3 + 0.2 * std::tanh(x[0]); };
  t.eta_lower = 1.0;
  t.eta_upper = 2.0;

  CanonicalSdeMap pushed = e_action(t, sde, &gauge, &time);
  CanonicalSdeMap back = e_action(invert(t), pushed, &gauge, &time);

  Vec kval;
  double worst = 0;
  Rng rng(88);
  for (int i = 0; i < 20; ++i) {
    Vec x = 0.8 * rng.normal_vec(2);
    Vec dz = 0.5 * rng.normal_vec(2);
    worst = std::max(
        worst, (back.psi(x, dz, kval) - sde.psi(x, dz, kval)).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst <= 1e-10);

  // Identity transformation: bitwise.
  StochasticTransformation id;
  CanonicalSdeMap same = e_action(id, sde, nullptr, nullptr);
  Vec x = vec2(0.2, -0.9), dz = vec2(0.05, 0.12);
  CHECK(same_vec(same.psi(x, dz, kval), sde.psi(x, dz, kval)));
}

TEST_CASE("flows integrate the generator slots") {
  GaugeAction gauge = rotation_gauge_action_r2();

  SUBCASE("zero transformation is stationary") {
    InfinitesimalTransformation v;
    v.state_dim = 2;
    FlowPoint p = flow_of(v, 1.7, vec2(0.3, -0.4), &gauge);
    CHECK(same_vec(p.x, vec2(0.3, -0.4)));
    CHECK(p.b[0] == 0.0);
    CHECK(p.eta == 1.0);
  }

  SUBCASE("unit density rate grows exponentially") {
    InfinitesimalTransformation v;
    v.state_dim = 2;
    v.tau = [](const Vec&) { return 1.0; };
    FlowPoint p = flow_of(v, 0.8, vec2(1.0, 0.0), &gauge);
    CHECK(p.eta == doctest::Approx(std::exp(0.8)).epsilon(1e-9));
  }

  SUBCASE("rotation generator flows to a rotation with linear gauge angle") {
    InfinitesimalTransformation v = rotation_generator();
    double a = 0.9;
    Vec x0 = vec2(1.2, -0.3);
    FlowPoint p = flow_of(v, a, x0, &gauge);
    double c = std::cos(a), s = std::sin(a);
    CHECK((p.x - vec2(c * x0[0] - s * x0[1], s * x0[0] + c * x0[1])).lpNorm<Eigen::Infinity>() <=
          1e-9);
    CHECK(p.b[0] == doctest::Approx(a).epsilon(1e-9));
    CHECK(p.eta == 1.0);
  }

  SUBCASE("one-parameter group property") {
    InfinitesimalTransformation v = rotation_generator();
    v.tau = [](const Vec& x) { return 0.2 * x[0]; };
    Vec x0 = vec2(0.8, 0.5);
    FlowPoint whole = flow_of(v, 1.1, x0, &gauge);
    FlowPoint first = flow_of(v, 0.4, x0, &gauge);
    FlowPoint second = flow_of(v, 0.7, first.x, &gauge);
    CHECK((whole.x - second.x).lpNorm<Eigen::Infinity>() <= 1e-8);
    // Gauge slots compose through the group, densities multiply.
    Vec combined = gauge.group->multiply(second.b, first.b);
    CHECK(std::abs(whole.b[0] - combined[0]) <= 1e-8);
    CHECK(std::abs(whole.eta - second.eta * first.eta) <= 1e-8);
  }

  SUBCASE("flow transformation inverts cleanly") {
    InfinitesimalTransformation v = rotation_generator();
    v.tau = [](const Vec& x) { return 0.1 * x[1]; };
    StochasticTransformation t = flow_transformation(v, 0.6, &gauge);
    Vec x = vec2(0.9, -0.2);
    CHECK((t.phi.inv(t.phi.fwd(x)) - x).lpNorm<Eigen::Infinity>() <= 1e-9);
    FlowPoint p = flow_of(v, 0.6, x, &gauge);
    CHECK(std::abs(t.b_of(x)[0] - p.b[0]) <= 1e-12);
    CHECK(std::abs(t.eta_of(x) - p.eta) <= 1e-12);
  }
}

TEST_CASE("push-forward along a strong transformation maps the drift field") {
  StochasticTransformation t;
  t.phi = exact_diffeo();
  InfinitesimalTransformation v;
  v.state_dim = 2;
  v.y = [](const Vec& x) { return vec2(x[0], 0.0); };

  InfinitesimalTransformation out = push_forward(t, v, nullptr);
  // Phi(x) = (-2 x2, x1/2) pushes (x1, 0) d1 to (0, y2) d2.
  for (const Vec& y : annulus_points())
    CHECK((out.y(y) - vec2(0.0, y[1])).lpNorm<Eigen::Infinity>() <= 1e-8);
  CHECK(!out.c);
  CHECK(!out.tau);
}

TEST_CASE("push-forward along the rotation rectifier cancels the algebra part") {
  GaugeAction gauge = rotation_gauge_action_r2();
  InfinitesimalTransformation v = rotation_generator();

  StochasticTransformation t;
  t.group = gauge.group;
  t.b_map = [](const Vec& x) { return vec1(-std::atan2(x[1], x[0])); };

  InfinitesimalTransformation out = push_forward(t, v, &gauge);
  for (const Vec& y : annulus_points()) {
    CHECK(std::abs(out.c(y)[0]) <= 1e-6);
    CHECK((out.y(y) - vec2(-y[1], y[0])).lpNorm<Eigen::Infinity>() <= 1e-8);
  }
}

TEST_CASE("push-forward is functorial") {
  GaugeAction gauge = rotation_gauge_action_r2();

  StochasticTransformation t;
  t.phi = exact_diffeo();
  t.phi.jacobian = [](const Vec&) {
    Mat j(2, 2);
    j << 0, -2, 0.5, 0;
    return j;
  };
  StochasticTransformation tp;
  tp.group = gauge.group;
  tp.b_map = [](const Vec& x) { return vec1(0.3 * x[0] + 0.1 * x[1] * x[1]); };
  tp.eta = [](const Vec& x) { return 1.2 + 0.1 * x[1] * x[1]; };
  tp.eta_lower = 1.0;
  tp.eta_upper = 10.0;

  InfinitesimalTransformation v = rotation_generator();
  v.tau = [](const Vec& x) { return 0.3 * x[0]; };

  InfinitesimalTransformation once = push_forward(compose(tp, t), v, &gauge);
  InfinitesimalTransformation twice = push_forward(tp, push_forward(t, v, &gauge), &gauge);

  for (const Vec& y : annulus_points()) {
    CHECK((once.y(y) - twice.y(y)).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((once.c(y) - twice.c(y)).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(std::abs(once.tau(y) - twice.tau(y)) <= 1e-8);
  }
}

TEST_CASE("bracket of strong fields is the commutator of vector fields") {
  InfinitesimalTransformation v1, v2;
  v1.state_dim = v2.state_dim = 2;
  v1.y = [](const Vec&) { return vec2(1.0, 0.0); };
  v2.y = [](const Vec& x) { return vec2(x[1], x[0] * x[0]); };

  InfinitesimalTransformation out = lie_bracket(v1, v2, nullptr, BracketForm::as_printed);
  for (const Vec& x : annulus_points())
    CHECK((out.y(x) - vec2(0.0, 2 * x[0])).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK(!out.c);
  CHECK(!out.tau);
}

TEST_CASE("bracket variants: antisymmetry and jacobi identity") {
  GaugeAction gauge = rotation_gauge_action_r2();
  InfinitesimalTransformation v1, v2, v3;
  v1.state_dim = v2.state_dim = v3.state_dim = 2;
  v1.y = [](const Vec&) { return vec2(1.0, 0.0); };
  v2.y = [](const Vec&) { return vec2(0.0, 1.0); };
  v3.y = [](const Vec&) { return vec2(1.0, 1.0); };
  v1.c = [](const Vec& x) { return vec1(x[0] + 2 * x[1]); };
  v2.c = [](const Vec& x) { return vec1(3 * x[0] + x[1]); };
  v3.c = [](const Vec& x) { return vec1(x[0] * x[1]); };

  Vec probe = vec2(0.3, 0.7);

  SUBCASE("the printed middle slot is not antisymmetric, the corrected one is") {
    auto defect = [&](BracketForm form) {
      InfinitesimalTransformation ab = lie_bracket(v1, v2, &gauge, form);
      InfinitesimalTransformation ba = lie_bracket(v2, v1, &gauge, form);
      return std::abs(ab.c(probe)[0] + ba.c(probe)[0]);
    };
    CHECK(defect(BracketForm::antisymmetrized) <= 1e-8);
    CHECK(defect(BracketForm::as_printed) >= 1.0); // fails by Y1(C2-C1)+Y2(C1-C2)
  }

  SUBCASE("jacobi identity holds for the corrected variant and fails for the printed one") {
    auto jacobi = [&](BracketForm form) {
      auto cyc = [&](const InfinitesimalTransformation& a, const InfinitesimalTransformation& b,
                     const InfinitesimalTransformation& c) {
        return lie_bracket(lie_bracket(a, b, &gauge, form), c, &gauge, form);
      };
      InfinitesimalTransformation j1 = cyc(v1, v2, v3);
      InfinitesimalTransformation j2 = cyc(v2, v3, v1);
      InfinitesimalTransformation j3 = cyc(v3, v1, v2);
      return std::abs(j1.c(probe)[0] + j2.c(probe)[0] + j3.c(probe)[0]);
    };
    CHECK(jacobi(BracketForm::antisymmetrized) <= 1e-3); // nested finite differences
    CHECK(jacobi(BracketForm::as_printed) >= 1.0);
  }
}

TEST_CASE("rectification equations hold for the closed-form rotation rectifier") {
  GaugeAction gauge = rotation_gauge_action_r2();
  InfinitesimalTransformation v = rotation_generator();

  StochasticTransformation t;
  t.group = gauge.group;
  t.b_map = [](const Vec& x) { return vec1(-std::atan2(x[1], x[0])); };

  RectifyReport report = rectify_check(t, {v}, gauge, annulus_points());
  CHECK(report.evaluated == annulus_points().size());
  CHECK(report.max_b_residual <= 1e-6);
  CHECK(report.max_eta_residual <= 1e-12);

  // A strong transformation rectifies a strong field with zero residual.
  InfinitesimalTransformation strong;
  strong.state_dim = 2;
  strong.y = [](const Vec& x) { return vec2(x[1], -0.3 * x[0]); };
  StochasticTransformation id;
  id.group = gauge.group;
  RectifyReport clean = rectify_check(id, {strong}, gauge, annulus_points());
  CHECK(clean.max_b_residual == 0.0);
  CHECK(clean.max_eta_residual == 0.0);
}

TEST_CASE("single-field rectification reconstructs the closed-form gauge") {
  GaugeAction gauge = rotation_gauge_action_r2();
  InfinitesimalTransformation v = rotation_generator();

  StochasticTransformation t = rectify_single(v, vec2(1.0, 0.0), gauge);
  REQUIRE(t.b_map);
  CHECK(!t.eta);
  for (const Vec& x : annulus_points()) {
    double expected = std::remainder(-std::atan2(x[1], x[0]), 2 * M_PI);
    CHECK(std::abs(std::remainder(t.b_of(x)[0] - expected, 2 * M_PI)) <= 1e-6);
  }
  RectifyReport report = rectify_check(t, {v}, gauge, annulus_points());
  CHECK(report.max_b_residual <= 1e-5);

  // Density slot: constant drift with constant rate decays exponentially
  // along the flow distance.
  InfinitesimalTransformation w;
  w.state_dim = 2;
  w.y = [](const Vec&) { return vec2(1.0, 0.0); };
  w.tau = [](const Vec&) { return 0.3; };
  StochasticTransformation s = rectify_single(w, vec2(0.0, 0.0), gauge);
  REQUIRE(s.eta);
  CHECK(!s.b_map);
  for (double a : {-0.8, 0.3, 1.4})
    CHECK(s.eta_of(vec2(a, 0.2)) == doctest::Approx(std::exp(-0.3 * a)).epsilon(1e-7));
  RectifyReport report2 = rectify_check(s, {w}, gauge, {vec2(0.5, -0.4), vec2(-0.3, 0.8)});
  CHECK(report2.max_eta_residual <= 1e-6);
}

TEST_CASE("process composition matches composed transformations within rounding") {
  SemimartingalePath z = make_levy2(1.0, 1.0 / 64, 700);
  CanonicalSdeMap sde = make_sigma_sde();
  Vec x0 = vec2(0.4, -0.1);
  SolutionPath x = solve_increment_map(sde, z, x0);
  GaugeAction gauge = rotation_gauge_action_r2();
  TimeAction time = scaling_time_action(2.0, &shared_additive_chart(2));

  StochasticTransformation t1;
  t1.phi = exact_diffeo();
  t1.group = gauge.group;
  t1.b_map = [](const Vec& s) { return vec1(0.5 * s[1]); };
  t1.eta = [](const Vec& s) { return 1.2 + 0.1 * std::tanh(s[0]); };
  t1.eta_lower = 1.0;
  t1.eta_upper = 2.0;

  StochasticTransformation t2;
  t2.phi.forward = [](const Vec& s) { return Vec(4.0 * s); };
  t2.phi.inverse = [](const Vec& s) { return Vec(0.25 * s); };
  t2.group = gauge.group;
  t2.b_map = [](const Vec& s) { return vec1(-0.25 * s[0]); };
  t2.eta = [](const Vec&) { return 2.0; };
  t2.eta_lower = 2.0;
  t2.eta_upper = 2.0;

  PActionResult once = p_action(compose(t2, t1), x, z, &gauge, &time);
  PActionResult step1 = p_action(t1, x, z, &gauge, &time);
  PActionResult step2 = p_action(t2, step1.x, step1.z, &gauge, &time);

  CHECK(max_state_diff(once.x, step2.x) <= 1e-12);
  REQUIRE(once.z.grid.size() == step2.z.grid.size());
  double worst_label = 0, worst_val = 0;
  for (std::size_t k = 0; k < once.z.grid.size(); ++k) {
    worst_label = std::max(worst_label, std::abs(once.z.grid[k] - step2.z.grid[k]));
    worst_val =
        std::max(worst_val, (once.z.values[k] - step2.z.values[k]).lpNorm<Eigen::Infinity>());
  }
  CHECK(worst_label <= 1e-12);
  CHECK(worst_val <= 1e-12);
}
