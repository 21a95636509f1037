#include "liesde/transform.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "liesde/numdiff.hpp"
#include "liesde/ode.hpp"

namespace liesde {

namespace {

// Columns are the invariant frame fields evaluated at g.
Mat frame_matrix(const LieGroupChart& chart, const Vec& g, bool left) {
  Mat f(chart.dim, chart.dim);
  for (int j = 0; j < chart.dim; ++j) f.col(j) = left ? chart.left_frame(j, g) : chart.frame(j, g);
  return f;
}

Mat basis_matrix(const GaugeAction& a) {
  if (!a.group) throw std::logic_error("gauge action: group chart not set");
  Mat b(a.group->dim, a.generators);
  for (int l = 0; l < a.generators; ++l) b.col(l) = a.basis_element(l);
  return b;
}

// Tangent vector at the group identity from algebra coefficients.
Vec algebra_vector(const GaugeAction& a, const Vec& coeffs) {
  if (coeffs.size() != a.generators)
    throw std::logic_error("gauge action: coefficient vector has wrong size");
  return basis_matrix(a) * coeffs;
}

// Least-squares decomposition of a tangent vector at the identity onto the
// algebra basis; rejects vectors outside the span.
Vec algebra_coefficients(const GaugeAction& a, const Vec& tangent) {
  Mat b = basis_matrix(a);
  Vec c = b.colPivHouseholderQr().solve(tangent);
  double resid = (b * c - tangent).lpNorm<Eigen::Infinity>();
  if (resid > 1e-8 * (1 + tangent.lpNorm<Eigen::Infinity>()))
    throw DomainError("tangent vector not in the span of the algebra basis");
  return c;
}

// Differential of right translation: pushes a tangent vector at the identity
// to the tangent space at g.  The right-invariant frame realizes it exactly.
Vec right_translate(const LieGroupChart& chart, const Vec& g, const Vec& tangent_at_id) {
  Mat f0 = frame_matrix(chart, chart.identity, false);
  Vec u = f0.partialPivLu().solve(tangent_at_id);
  Mat fg = frame_matrix(chart, g, false);
  return fg * u;
}

// Differential of left translation by g on a tangent vector at the identity.
Vec left_translate(const LieGroupChart& chart, const Vec& g, const Vec& tangent_at_id) {
  Mat f0 = frame_matrix(chart, chart.identity, true);
  Vec u = f0.partialPivLu().solve(tangent_at_id);
  Mat fg = frame_matrix(chart, g, true);
  return fg * u;
}

// Pushes a tangent vector at g back to the identity along right translation
// by g^{-1}: decompose in the right-invariant frame at g and evaluate at 1.
Vec right_untranslate(const LieGroupChart& chart, const Vec& g, const Vec& tangent_at_g) {
  Mat fg = frame_matrix(chart, g, false);
  Vec u = fg.partialPivLu().solve(tangent_at_g);
  Mat f0 = frame_matrix(chart, chart.identity, false);
  return f0 * u;
}

// Adjoint action of g on a tangent vector at the identity:
// Ad_g = d(L_g . R_{g^{-1}}) at 1, realized through the invariant frames.
Vec adjoint(const LieGroupChart& chart, const Vec& g, const Vec& tangent_at_id) {
  Vec ginv = chart.inverse(g);
  Vec at_ginv = right_translate(chart, ginv, tangent_at_id);
  Mat lf = frame_matrix(chart, ginv, true);
  Vec u = lf.partialPivLu().solve(at_ginv);
  Mat lf0 = frame_matrix(chart, chart.identity, true);
  return lf0 * u;
}

std::vector<double> trapezoid_times(const std::vector<double>& grid,
                                    const std::vector<double>& eta_nodes, double lower,
                                    double upper) {
  if (eta_nodes.size() != grid.size())
    throw std::logic_error("time change: one density value per grid node required");
  for (double e : eta_nodes)
    if (!std::isfinite(e) || e < lower || e > upper)
      throw DomainError("time change: density outside declared bounds");
  std::vector<double> beta(grid.size());
  beta[0] = grid.empty() ? 0.0 : grid[0];
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    beta[k + 1] = beta[k] + (grid[k + 1] - grid[k]) * 0.5 * (eta_nodes[k] + eta_nodes[k + 1]);
  return beta;
}

double interp_monotone(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (xs.size() < 2) throw std::logic_error("time change: degenerate grid");
  const double slack = 1e-9 * (1 + std::abs(xs.back() - xs.front()));
  if (x < xs.front() - slack || x > xs.back() + slack)
    throw DomainError("time change: query outside the covered interval");
  x = std::clamp(x, xs.front(), xs.back());
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  std::size_t hi = std::min<std::size_t>(xs.size() - 1, (std::size_t)(it - xs.begin()));
  if (hi == 0) hi = 1;
  std::size_t lo = hi - 1;
  double span = xs[hi] - xs[lo];
  double w = span > 0 ? (x - xs[lo]) / span : 0.0;
  return ys[lo] + w * (ys[hi] - ys[lo]);
}

void relabel(SemimartingalePath& path, const std::vector<double>& beta) {
  path.grid = beta;
  for (auto& mark : path.jumps) mark.time = beta[mark.index];
}

void relabel(SolutionPath& path, const std::vector<double>& beta) { path.grid = beta; }

bool unit_density(const std::vector<double>& eta_nodes) {
  return std::all_of(eta_nodes.begin(), eta_nodes.end(), [](double e) { return e == 1.0; });
}

} // namespace

Mat rot2(double theta) {
  double w = std::remainder(theta, 2 * M_PI);
  Mat r(2, 2);
  if (w == 0.0) {
    r << 1, 0, 0, 1;
  } else if (w == M_PI_2) {
    r << 0, -1, 1, 0;
  } else if (w == -M_PI_2) {
    r << 0, 1, -1, 0;
  } else if (w == M_PI || w == -M_PI) {
    r << -1, 0, 0, -1;
  } else {
    double c = std::cos(w), s = std::sin(w);
    r << c, -s, s, c;
  }
  return r;
}

// ---------------------------------------------------------------------------
// GaugeAction / TimeAction
// ---------------------------------------------------------------------------

Mat GaugeAction::upsilon_of(const Vec& g) const {
  if (upsilon) return upsilon(g);
  if (!noise || !xi) throw std::logic_error("gauge action: xi and noise chart required");
  auto map = [&](const Vec& z) { return xi(g, z); };
  return fd_jacobian(map, noise->identity);
}

std::vector<Mat> GaugeAction::o_second_of(const Vec& g) const {
  if (o_second) return o_second(g);
  return std::vector<Mat>((std::size_t)noise->dim, Mat::Zero(noise->dim, noise->dim));
}

Vec GaugeAction::basis_element(int l) const {
  if (!group) throw std::logic_error("gauge action: group chart not set");
  if (l < 0 || l >= generators) throw std::logic_error("gauge action: basis index out of range");
  if (!algebra_basis.empty()) return algebra_basis[(std::size_t)l];
  return Vec(Vec::Unit(group->dim, l));
}

Vec GaugeAction::bracket(const Vec& c1, const Vec& c2) const {
  if (algebra_bracket) return algebra_bracket(c1, c2);
  return Vec(Vec::Zero(generators));
}

Mat TimeAction::gamma_of(double r) const {
  if (gamma_lin) return gamma_lin(r);
  if (!noise || !gamma) throw std::logic_error("time action: gamma and noise chart required");
  auto map = [&](const Vec& z) { return gamma(r, z); };
  return fd_jacobian(map, noise->identity);
}

std::vector<Mat> TimeAction::q_second_of(double r) const {
  if (q_second) return q_second(r);
  return std::vector<Mat>((std::size_t)noise->dim, Mat::Zero(noise->dim, noise->dim));
}

double gauge_action_defect(const GaugeAction& action, const std::vector<Vec>& group_samples,
                           const std::vector<Vec>& noise_samples) {
  double worst = 0;
  for (const Vec& z : noise_samples) {
    worst = std::max(worst, (action.xi(action.group->identity, z) - z).lpNorm<Eigen::Infinity>());
    for (const Vec& g : group_samples)
      for (const Vec& h : group_samples) {
        Vec lhs = action.xi(action.group->multiply(g, h), z);
        Vec rhs = action.xi(g, action.xi(h, z));
        worst = std::max(worst, (lhs - rhs).lpNorm<Eigen::Infinity>());
      }
  }
  return worst;
}

double upsilon_defect(const GaugeAction& action, const std::vector<Vec>& group_samples) {
  if (!action.upsilon) return 0;
  double worst = 0;
  for (const Vec& g : group_samples) {
    auto map = [&](const Vec& z) { return action.xi(g, z); };
    Mat fd = fd_jacobian(map, action.noise->identity);
    worst = std::max(worst, (fd - action.upsilon(g)).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

double time_action_defect(const TimeAction& action, const std::vector<double>& rate_samples,
                          const std::vector<Vec>& noise_samples) {
  double worst = 0;
  for (const Vec& z : noise_samples) {
    worst = std::max(worst, (action.gamma(1.0, z) - z).lpNorm<Eigen::Infinity>());
    for (double r : rate_samples)
      for (double s : rate_samples) {
        Vec lhs = action.gamma(r * s, z);
        Vec rhs = action.gamma(r, action.gamma(s, z));
        worst = std::max(worst, (lhs - rhs).lpNorm<Eigen::Infinity>());
      }
  }
  return worst;
}

double commutation_defect(const GaugeAction& gauge, const TimeAction& time,
                          const std::vector<Vec>& group_samples,
                          const std::vector<double>& rate_samples,
                          const std::vector<Vec>& noise_samples) {
  double worst = 0;
  for (const Vec& z : noise_samples)
    for (const Vec& g : group_samples)
      for (double r : rate_samples) {
        Vec lhs = gauge.xi(g, time.gamma(r, z));
        Vec rhs = time.gamma(r, gauge.xi(g, z));
        worst = std::max(worst, (lhs - rhs).lpNorm<Eigen::Infinity>());
      }
  return worst;
}

GaugeAction rotation_gauge_action_r2() {
  GaugeAction a;
  a.group = &shared_so2_chart();
  a.noise = &shared_additive_chart(2);
  a.xi = [](const Vec& g, const Vec& z) { return Vec(rot2(g[0]) * z); };
  a.generators = 1;
  a.generator = [](int, const Vec& z) {
    Vec k(2);
    k << -z[1], z[0];
    return k;
  };
  a.algebra_basis = {Vec(Vec::Ones(1))};
  a.upsilon = [](const Vec& g) { return rot2(g[0]); };
  a.automorphism = true;
  a.isometric_log = true;
  return a;
}

GaugeAction rotation_gauge_action_gl2r2() {
  GaugeAction a;
  a.group = &shared_so2_chart();
  a.noise = &shared_gl_rm_chart(2, 2);
  auto split = [](const Vec& z) {
    Mat m(2, 2);
    m << z[0], z[1], z[2], z[3];
    return std::make_pair(m, Vec(z.tail(2)));
  };
  auto join = [](const Mat& m, const Vec& v) {
    Vec z(6);
    z << m(0, 0), m(0, 1), m(1, 0), m(1, 1), v[0], v[1];
    return z;
  };
  a.xi = [split, join](const Vec& g, const Vec& z) {
    Mat b = rot2(g[0]);
    auto [m, v] = split(z);
    return join(b * m * b.transpose(), b * v);
  };
  a.generators = 1;
  a.generator = [split, join](int, const Vec& z) {
    Mat r(2, 2);
    r << 0, -1, 1, 0;
    auto [m, v] = split(z);
    return join(r * m - m * r, r * v);
  };
  a.algebra_basis = {Vec(Vec::Ones(1))};
  a.upsilon = [](const Vec& g) {
    Mat b = rot2(g[0]);
    Mat u = Mat::Zero(6, 6);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) u(2 * i + j, 2 * k + l) = b(i, k) * b(j, l);
    u.block(4, 4, 2, 2) = b;
    return u;
  };
  a.automorphism = true;
  a.isometric_log = true;
  return a;
}

TimeAction scaling_time_action(double alpha, const LieGroupChart* noise) {
  if (!(alpha > 0)) throw std::logic_error("scaling action: positive index required");
  TimeAction t;
  t.noise = noise;
  t.gamma = [alpha](double r, const Vec& z) {
    if (!(r > 0)) throw DomainError("scaling action: rate must be positive");
    return Vec(std::pow(r, 1.0 / alpha) * z);
  };
  t.generator_h = [alpha](const Vec& z) { return Vec(z / alpha); };
  int n = noise->dim;
  t.gamma_lin = [alpha, n](double r) {
    if (!(r > 0)) throw DomainError("scaling action: rate must be positive");
    return Mat(std::pow(r, 1.0 / alpha) * Mat::Identity(n, n));
  };
  return t;
}

// ---------------------------------------------------------------------------
// Stochastic transformations
// ---------------------------------------------------------------------------

Vec Diffeo::fwd(const Vec& x) const { return forward ? forward(x) : x; }

Vec Diffeo::inv(const Vec& y) const {
  if (!forward) return y;
  if (!inverse) throw std::logic_error("diffeo: inverse map not provided");
  return inverse(y);
}

Mat Diffeo::jac(const Vec& x) const {
  if (jacobian) return jacobian(x);
  if (!forward) return Mat::Identity(x.size(), x.size());
  return fd_jacobian(forward, x);
}

Vec StochasticTransformation::b_of(const Vec& x) const {
  if (b_map) return b_map(x);
  if (!group) throw std::logic_error("transformation: group chart required for gauge part");
  return group->identity;
}

double StochasticTransformation::eta_of(const Vec& x) const {
  if (!eta) return 1.0;
  double e = eta(x);
  if (!std::isfinite(e) || e < eta_lower || e > eta_upper)
    throw DomainError("transformation: time density outside declared bounds");
  return e;
}

StochasticTransformation compose(const StochasticTransformation& outer,
                                 const StochasticTransformation& inner) {
  if (outer.group && inner.group && outer.group != inner.group)
    throw std::logic_error("compose: transformations use different gauge groups");
  StochasticTransformation out;
  out.group = outer.group ? outer.group : inner.group;

  if (!outer.phi.is_identity() || !inner.phi.is_identity()) {
    Diffeo po = outer.phi, pi = inner.phi;
    out.phi.forward = [po, pi](const Vec& x) { return po.fwd(pi.fwd(x)); };
    out.phi.inverse = [po, pi](const Vec& y) { return pi.inv(po.inv(y)); };
    out.phi.jacobian = [po, pi](const Vec& x) { return Mat(po.jac(pi.fwd(x)) * pi.jac(x)); };
  }

  if (outer.b_map || inner.b_map) {
    if (!out.group) throw std::logic_error("compose: gauge part present but no group chart");
    const LieGroupChart* group = out.group;
    auto bo = outer.b_map, bi = inner.b_map;
    Diffeo pi = inner.phi;
    Vec id = group->identity;
    out.b_map = [group, bo, bi, pi, id](const Vec& x) {
      Vec o = bo ? bo(pi.fwd(x)) : id;
      Vec i = bi ? bi(x) : id;
      return group->multiply(o, i);
    };
  }

  if (outer.eta || inner.eta) {
    auto eo = outer.eta, ei = inner.eta;
    Diffeo pi = inner.phi;
    out.eta = [eo, ei, pi](const Vec& x) {
      double o = eo ? eo(pi.fwd(x)) : 1.0;
      double i = ei ? ei(x) : 1.0;
      return o * i;
    };
    out.eta_lower = outer.eta_lower * inner.eta_lower;
    out.eta_upper = outer.eta_upper * inner.eta_upper;
  }
  return out;
}

StochasticTransformation invert(const StochasticTransformation& t) {
  StochasticTransformation out;
  out.group = t.group;

  if (!t.phi.is_identity()) {
    Diffeo p = t.phi;
    out.phi.forward = [p](const Vec& y) { return p.inv(y); };
    out.phi.inverse = [p](const Vec& x) { return p.fwd(x); };
    if (t.phi.jacobian)
      out.phi.jacobian = [p](const Vec& y) { return Mat(p.jac(p.inv(y)).inverse()); };
  }

  if (t.b_map) {
    if (!t.group) throw std::logic_error("invert: gauge part present but no group chart");
    const LieGroupChart* group = t.group;
    auto b = t.b_map;
    Diffeo p = t.phi;
    out.b_map = [group, b, p](const Vec& y) { return group->inverse(b(p.inv(y))); };
  }

  if (t.eta) {
    auto e = t.eta;
    Diffeo p = t.phi;
    out.eta = [e, p](const Vec& y) { return 1.0 / e(p.inv(y)); };
    out.eta_lower = 1.0 / t.eta_upper;
    out.eta_upper = 1.0 / t.eta_lower;
  }
  return out;
}

Vec InfinitesimalTransformation::y_of(const Vec& x) const {
  return y ? y(x) : Vec(Vec::Zero(x.size()));
}

Vec InfinitesimalTransformation::c_of(const Vec& x, int generators) const {
  return c ? c(x) : Vec(Vec::Zero(generators));
}

double InfinitesimalTransformation::tau_of(const Vec& x) const { return tau ? tau(x) : 0.0; }

// ---------------------------------------------------------------------------
// Gauge / time actions on noise paths
// ---------------------------------------------------------------------------

SemimartingalePath apply_gauge_steps(const SemimartingalePath& path, const GaugeAction& action,
                                     const std::vector<Vec>& g_cont,
                                     const std::vector<Vec>* g_jump) {
  if (!action.noise || path.chart->dim != action.noise->dim)
    throw std::logic_error("gauge action: chart dimension mismatch with the path");
  if (g_cont.size() != path.steps())
    throw std::logic_error("gauge action: one control value per step required");
  const std::vector<Vec>& gj = g_jump ? *g_jump : g_cont;
  if (gj.size() != path.steps())
    throw std::logic_error("gauge action: one jump control value per step required");

  const LieGroupChart& chart = *path.chart;
  SemimartingalePath out;
  out.chart = path.chart;
  out.grid = path.grid;
  out.cont_increments.resize(path.steps());

  for (std::size_t k = 0; k < path.steps(); ++k) {
    const Vec& g = g_cont[k];
    if (!action.group->contains(g)) throw DomainError("gauge action: control left the group");
    const Vec& inc = path.cont_increments[k];
    if (inc.lpNorm<Eigen::Infinity>() == 0) {
      out.cont_increments[k] = inc;
      continue;
    }
    if (chart.additive) {
      Vec v = action.upsilon_of(g) * inc;
      if (action.o_second) {
        std::vector<Mat> o = action.o_second(g);
        for (int alpha = 0; alpha < chart.dim; ++alpha)
          v[alpha] += 0.5 * inc.dot(o[(std::size_t)alpha] * inc);
      }
      out.cont_increments[k] = v;
    } else if (action.automorphism) {
      // An automorphism intertwines the exponential, so the logarithmic
      // increment maps through the linearization exactly.
      out.cont_increments[k] = action.upsilon_of(g) * inc;
    } else {
      Vec element = advance(chart, chart.identity, inc);
      Vec moved = action.xi(g, element);
      out.cont_increments[k] = log_coords(moved, chart);
    }
  }

  out.jumps.reserve(path.jumps.size());
  for (const JumpMark& mark : path.jumps) {
    const Vec& g = gj[mark.index - 1];
    if (!action.group->contains(g)) throw DomainError("gauge action: control left the group");
    JumpMark moved = mark;
    moved.jump.value = action.xi(g, mark.jump.value);
    if (!chart.contains(moved.jump.value))
      throw DomainError("gauge action: transformed jump left the noise group");
    out.jumps.push_back(std::move(moved));
  }

  out.values.assign(path.grid.size(), Vec());
  out.values[0] = path.values.empty() ? chart.identity : path.values[0];
  replay(out);
  return out;
}

SemimartingalePath apply_gauge_to_noise(const SemimartingalePath& path, const GaugeAction& action,
                                        const PredictableControl& control) {
  if (!control.evaluate) throw std::logic_error("gauge action: control not set");
  std::vector<Vec> g(path.steps());
  for (std::size_t k = 0; k < path.steps(); ++k) g[k] = control.evaluate(PathView{&path, k});
  return apply_gauge_steps(path, action, g, nullptr);
}

SemimartingalePath apply_gamma_steps(const SemimartingalePath& path, const TimeAction& action,
                                     const std::vector<double>& r_cont,
                                     const std::vector<double>* r_jump) {
  if (!action.noise || path.chart->dim != action.noise->dim)
    throw std::logic_error("time action: chart dimension mismatch with the path");
  if (r_cont.size() != path.steps())
    throw std::logic_error("time action: one rate value per step required");
  const std::vector<double>& rj = r_jump ? *r_jump : r_cont;
  if (rj.size() != path.steps())
    throw std::logic_error("time action: one jump rate value per step required");

  const LieGroupChart& chart = *path.chart;
  SemimartingalePath out;
  out.chart = path.chart;
  out.grid = path.grid;
  out.cont_increments.resize(path.steps());

  for (std::size_t k = 0; k < path.steps(); ++k) {
    double r = r_cont[k];
    if (!(r > 0) || !std::isfinite(r)) throw DomainError("time action: rate must be positive");
    const Vec& inc = path.cont_increments[k];
    if (inc.lpNorm<Eigen::Infinity>() == 0) {
      out.cont_increments[k] = inc;
      continue;
    }
    if (chart.additive) {
      Vec v = action.gamma_of(r) * inc;
      if (action.q_second) {
        std::vector<Mat> q = action.q_second(r);
        for (int alpha = 0; alpha < chart.dim; ++alpha)
          v[alpha] += 0.5 * inc.dot(q[(std::size_t)alpha] * inc);
      }
      out.cont_increments[k] = v;
    } else {
      Vec element = advance(chart, chart.identity, inc);
      Vec moved = action.gamma(r, element);
      out.cont_increments[k] = log_coords(moved, chart);
    }
  }

  out.jumps.reserve(path.jumps.size());
  for (const JumpMark& mark : path.jumps) {
    double r = rj[mark.index - 1];
    if (!(r > 0) || !std::isfinite(r)) throw DomainError("time action: rate must be positive");
    JumpMark moved = mark;
    moved.jump.value = action.gamma(r, mark.jump.value);
    if (!chart.contains(moved.jump.value))
      throw DomainError("time action: transformed jump left the noise group");
    out.jumps.push_back(std::move(moved));
  }

  out.values.assign(path.grid.size(), Vec());
  out.values[0] = path.values.empty() ? chart.identity : path.values[0];
  replay(out);
  return out;
}

SemimartingalePath apply_gamma_to_noise(const SemimartingalePath& path, const TimeAction& action,
                                        const PredictableControl& control, double lower,
                                        double upper) {
  if (!control.evaluate) throw std::logic_error("time action: control not set");
  std::vector<double> r(path.steps());
  for (std::size_t k = 0; k < path.steps(); ++k) {
    Vec v = control.evaluate(PathView{&path, k});
    if (v.size() != 1) throw std::logic_error("time action: control must return one value");
    if (!std::isfinite(v[0]) || v[0] < lower || v[0] > upper)
      throw DomainError("time action: control outside declared bounds");
    r[k] = v[0];
  }
  return apply_gamma_steps(path, action, r, nullptr);
}

// ---------------------------------------------------------------------------
// Time change
// ---------------------------------------------------------------------------

double TimeChange::beta_at(double t) const { return interp_monotone(input_grid, beta, t); }

double TimeChange::alpha_at(double s) const { return interp_monotone(beta, input_grid, s); }

TimeChangedPath apply_time_change(const SemimartingalePath& path,
                                  const std::vector<double>& eta_nodes, double lower,
                                  double upper) {
  TimeChangedPath out{path, TimeChange{path.grid, path.grid}};
  if (unit_density(eta_nodes)) {
    if (eta_nodes.size() != path.grid.size())
      throw std::logic_error("time change: one density value per grid node required");
    return out;
  }
  out.change.beta = trapezoid_times(path.grid, eta_nodes, lower, upper);
  relabel(out.path, out.change.beta);
  return out;
}

TimeChangedSolution apply_time_change(const SolutionPath& path,
                                      const std::vector<double>& eta_nodes, double lower,
                                      double upper) {
  TimeChangedSolution out{path, TimeChange{path.grid, path.grid}};
  if (unit_density(eta_nodes)) {
    if (eta_nodes.size() != path.grid.size())
      throw std::logic_error("time change: one density value per grid node required");
    return out;
  }
  out.change.beta = trapezoid_times(path.grid, eta_nodes, lower, upper);
  relabel(out.path, out.change.beta);
  if (out.path.exploded) out.path.stop_time = out.change.beta_at(path.stop_time);
  return out;
}

Vec path_value_at(const SemimartingalePath& path, double t) {
  if (path.grid.empty() || t < path.grid.front())
    throw DomainError("path evaluation before the first grid time");
  auto it = std::upper_bound(path.grid.begin(), path.grid.end(), t);
  std::size_t idx = (std::size_t)(it - path.grid.begin());
  idx = std::min(idx - 1, path.grid.size() - 1);
  return path.values[idx];
}

Vec path_value_at(const SolutionPath& path, double t) {
  if (path.grid.empty() || t < path.grid.front())
    throw DomainError("path evaluation before the first grid time");
  auto it = std::upper_bound(path.grid.begin(), path.grid.end(), t);
  std::size_t idx = (std::size_t)(it - path.grid.begin());
  idx = std::min(idx - 1, path.grid.size() - 1);
  return path.states[idx];
}

// ---------------------------------------------------------------------------
// Process action and equation action
// ---------------------------------------------------------------------------

PActionResult p_action(const StochasticTransformation& t, const SolutionPath& x,
                       const SemimartingalePath& z, const GaugeAction* gauge,
                       const TimeAction* time) {
  if (x.grid.size() != z.grid.size() || !std::equal(x.grid.begin(), x.grid.end(), z.grid.begin()))
    throw std::logic_error("process action: state and noise must share one grid");
  if (t.b_map && !gauge) throw std::logic_error("process action: gauge part needs a gauge action");
  if (t.eta && !time) throw std::logic_error("process action: time density needs a time action");
  if (t.b_map && gauge && t.group && gauge->group && t.group != gauge->group)
    throw std::logic_error("process action: transformation and action group charts differ");

  const std::size_t steps = z.steps();
  std::map<std::size_t, const Vec*> state_jump;
  for (const auto& j : x.jumps) state_jump[j.first] = &j.second;

  // Left limit of the state at grid node k: the recorded pre-jump state when
  // the node carries a jump, the node value otherwise.
  auto left_state = [&](std::size_t k) -> const Vec& {
    auto it = state_jump.find(k);
    return it == state_jump.end() ? x.states[k] : *it->second;
  };

  std::vector<Vec> g_cont, g_jump;
  std::vector<double> r_cont, r_jump, eta_nodes;
  if (t.b_map) {
    g_cont.resize(steps);
    g_jump.resize(steps);
  }
  if (t.eta) {
    r_cont.resize(steps);
    r_jump.resize(steps);
    eta_nodes.resize(steps + 1);
    eta_nodes[0] = t.eta_of(x.states[0]);
  }
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec& xk = x.states[k];
    const Vec& xpre = left_state(k + 1);
    if (t.b_map) {
      g_cont[k] = t.b_of(xk);
      g_jump[k] = t.b_of(xpre);
    }
    if (t.eta) {
      r_cont[k] = t.eta_of(xk);
      r_jump[k] = t.eta_of(xpre);
      eta_nodes[k + 1] = t.eta_of(xpre);
    }
  }

  SemimartingalePath z_out = z;
  if (t.eta) z_out = apply_gamma_steps(z_out, *time, r_cont, &r_jump);
  if (t.b_map) z_out = apply_gauge_steps(z_out, *gauge, g_cont, &g_jump);

  SolutionPath x_out;
  x_out.grid = x.grid;
  x_out.states.resize(x.states.size());
  for (std::size_t k = 0; k < x.states.size(); ++k) x_out.states[k] = t.phi.fwd(x.states[k]);
  x_out.jumps.reserve(x.jumps.size());
  for (const auto& j : x.jumps) x_out.jumps.emplace_back(j.first, t.phi.fwd(j.second));
  x_out.exploded = x.exploded;
  x_out.stop_time = x.stop_time;

  TimeChange change{x.grid, x.grid};
  if (t.eta) {
    change.beta = trapezoid_times(x.grid, eta_nodes, t.eta_lower * 0.5, t.eta_upper * 2.0);
    relabel(x_out, change.beta);
    relabel(z_out, change.beta);
    if (x_out.exploded) x_out.stop_time = change.beta_at(x.stop_time);
  }
  return PActionResult{std::move(x_out), std::move(z_out), std::move(change)};
}

CanonicalSdeMap e_action(const StochasticTransformation& t, const CanonicalSdeMap& sde,
                         const GaugeAction* gauge, const TimeAction* time) {
  if (t.b_map && !gauge)
    throw std::logic_error("equation action: gauge part needs a gauge action");
  if (t.eta && !time) throw std::logic_error("equation action: time density needs a time action");

  CanonicalSdeMap out;
  out.state_dim = sde.state_dim;
  out.noise_chart = sde.noise_chart;
  out.parameter = sde.parameter;
  out.explosion_bound = sde.explosion_bound;

  StochasticTransformation tc = t;
  CanonicalSdeMap base = sde;
  out.psi = [tc, base, gauge, time](const Vec& xprime, const Vec& dz, const Vec& k) {
    Vec x = tc.phi.inv(xprime);
    Vec w = dz;
    if (tc.b_map) w = gauge->xi(gauge->group->inverse(tc.b_map(x)), w);
    if (tc.eta) w = time->gamma(1.0 / tc.eta_of(x), w);
    return tc.phi.fwd(base.psi(x, w, k));
  };

  Diffeo phi = t.phi;
  auto base_domain = sde.state_domain;
  out.state_domain = [phi, base_domain](const Vec& xprime) {
    try {
      Vec x = phi.inv(xprime);
      if (!x.allFinite()) return false;
      return base_domain ? base_domain(x) : true;
    } catch (const DomainError&) {
      return false;
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Flows, push-forwards, brackets, rectification
// ---------------------------------------------------------------------------

FlowPoint flow_of(const InfinitesimalTransformation& v, double a, const Vec& x,
                  const GaugeAction* gauge, double tol) {
  if (v.c && !gauge) throw std::logic_error("flow: algebra part needs a gauge action");
  const int m = (int)x.size();
  const int gdim = gauge ? gauge->group->dim : 0;

  Vec s0(m + gdim + 1);
  s0.head(m) = x;
  if (gdim > 0) s0.segment(m, gdim) = gauge->group->identity;
  s0[m + gdim] = 1.0;

  auto rhs = [&](double, const Vec& s) {
    Vec out = Vec::Zero(s.size());
    Vec xs = s.head(m);
    out.head(m) = v.y_of(xs);
    if (gdim > 0 && v.c) {
      Vec xi_vec = algebra_vector(*gauge, v.c_of(xs, gauge->generators));
      out.segment(m, gdim) = right_translate(*gauge->group, s.segment(m, gdim), xi_vec);
    }
    out[m + gdim] = v.tau_of(xs) * s[m + gdim];
    return out;
  };

  Vec sa;
  try {
    sa = integrate_ode(rhs, s0, 0.0, a, tol);
  } catch (const OdeError& e) {
    throw ExplosionError(std::string("flow: ") + e.what(), a);
  }
  FlowPoint p;
  p.x = sa.head(m);
  if (gdim > 0) p.b = sa.segment(m, gdim);
  p.eta = sa[m + gdim];
  return p;
}

StochasticTransformation flow_transformation(const InfinitesimalTransformation& v, double a,
                                             const GaugeAction* gauge, double tol) {
  StochasticTransformation t;
  if (v.y) {
    t.phi.forward = [v, a, gauge, tol](const Vec& x) { return flow_of(v, a, x, gauge, tol).x; };
    t.phi.inverse = [v, a, gauge, tol](const Vec& y) { return flow_of(v, -a, y, gauge, tol).x; };
  }
  if (v.c) {
    t.group = gauge->group;
    t.b_map = [v, a, gauge, tol](const Vec& x) { return flow_of(v, a, x, gauge, tol).b; };
  } else if (gauge) {
    t.group = gauge->group;
  }
  if (v.tau)
    t.eta = [v, a, gauge, tol](const Vec& x) { return flow_of(v, a, x, gauge, tol).eta; };
  return t;
}

InfinitesimalTransformation push_forward(const StochasticTransformation& t,
                                         const InfinitesimalTransformation& v,
                                         const GaugeAction* gauge) {
  if ((t.b_map || v.c) && !gauge)
    throw std::logic_error("push-forward: algebra parts need a gauge action");

  InfinitesimalTransformation out;
  out.state_dim = v.state_dim;
  StochasticTransformation tc = t;
  InfinitesimalTransformation vc = v;

  if (v.y) {
    out.y = [tc, vc](const Vec& yp) {
      Vec x = tc.phi.inv(yp);
      return Vec(tc.phi.jac(x) * vc.y(x));
    };
  }

  if (v.c || (t.b_map && v.y)) {
    const GaugeAction* ga = gauge;
    out.c = [tc, vc, ga](const Vec& yp) {
      Vec x = tc.phi.inv(yp);
      Vec total = Vec::Zero(ga->group->dim);
      if (vc.c) {
        Vec xi_vec = algebra_vector(*ga, vc.c(x));
        total += tc.b_map ? adjoint(*ga->group, tc.b_map(x), xi_vec) : xi_vec;
      }
      if (tc.b_map && vc.y) {
        Vec yb = dir_derivative(tc.b_map, x, vc.y(x));
        total += right_untranslate(*ga->group, tc.b_map(x), yb);
      }
      return algebra_coefficients(*ga, total);
    };
  }

  if (v.tau || (t.eta && v.y)) {
    out.tau = [tc, vc](const Vec& yp) {
      Vec x = tc.phi.inv(yp);
      double total = vc.tau ? vc.tau(x) : 0.0;
      if (tc.eta && vc.y) {
        std::function<double(const Vec&)> eta = tc.eta;
        total += dir_derivative_scalar(eta, x, vc.y(x)) / tc.eta_of(x);
      }
      return total;
    };
  }
  return out;
}

InfinitesimalTransformation lie_bracket(const InfinitesimalTransformation& v1,
                                        const InfinitesimalTransformation& v2,
                                        const GaugeAction* gauge, BracketForm form) {
  if (v1.state_dim != v2.state_dim)
    throw std::logic_error("bracket: state dimensions differ");
  if ((v1.c || v2.c) && !gauge) throw std::logic_error("bracket: algebra parts need a gauge action");

  InfinitesimalTransformation out;
  out.state_dim = v1.state_dim;
  InfinitesimalTransformation a = v1, b = v2;

  if (v1.y || v2.y) {
    out.y = [a, b](const Vec& x) {
      Vec result = Vec::Zero(x.size());
      if (b.y) {
        Mat jb = fd_jacobian(b.y, x);
        result += jb * a.y_of(x);
      }
      if (a.y) {
        Mat ja = fd_jacobian(a.y, x);
        result -= ja * b.y_of(x);
      }
      return result;
    };
  }

  if (v1.c || v2.c) {
    const GaugeAction* ga = gauge;
    out.c = [a, b, ga, form](const Vec& x) {
      int r = ga->generators;
      Vec result = Vec::Zero(r);
      if (b.c && a.y) result += dir_derivative(b.c, x, a.y(x));
      const auto& second = (form == BracketForm::as_printed) ? b.c : a.c;
      if (second && b.y) result -= dir_derivative(second, x, b.y(x));
      result -= ga->bracket(a.c_of(x, r), b.c_of(x, r));
      return result;
    };
  }

  if ((v1.tau && v2.y) || (v2.tau && v1.y)) {
    out.tau = [a, b](const Vec& x) {
      double result = 0;
      if (b.tau && a.y) {
        std::function<double(const Vec&)> f = b.tau;
        result += dir_derivative_scalar(f, x, a.y(x));
      }
      if (a.tau && b.y) {
        std::function<double(const Vec&)> f = a.tau;
        result -= dir_derivative_scalar(f, x, b.y(x));
      }
      return result;
    };
  }
  return out;
}

RectifyReport rectify_check(const StochasticTransformation& t,
                            const std::vector<InfinitesimalTransformation>& vs,
                            const GaugeAction& gauge, const std::vector<Vec>& points) {
  RectifyReport report;
  const LieGroupChart& group = *gauge.group;
  for (const Vec& x : points) {
    try {
      Vec bx = t.b_of(x);
      double etax = t.eta_of(x);
      for (const auto& v : vs) {
        Vec yx = v.y_of(x);
        // Gauge slot: Y(B) + L_{B*}(C) must vanish.
        Vec yb = t.b_map ? dir_derivative(t.b_map, x, yx) : Vec(Vec::Zero(group.dim));
        Vec xi_vec = algebra_vector(gauge, v.c_of(x, gauge.generators));
        Vec lb = left_translate(group, bx, xi_vec);
        report.max_b_residual =
            std::max(report.max_b_residual, (yb + lb).lpNorm<Eigen::Infinity>());
        // Density slot: Y(eta) + tau eta must vanish.
        double ye = 0;
        if (t.eta) {
          std::function<double(const Vec&)> eta = t.eta;
          ye = dir_derivative_scalar(eta, x, yx);
        }
        report.max_eta_residual =
            std::max(report.max_eta_residual, std::abs(ye + v.tau_of(x) * etax));
      }
      ++report.evaluated;
    } catch (const DomainError&) {
      ++report.skipped;
    } catch (const ConvergenceError&) {
      ++report.skipped;
    }
  }
  return report;
}

StochasticTransformation rectify_single(const InfinitesimalTransformation& v, const Vec& x0,
                                        const GaugeAction& gauge, double tol) {
  const int m = (int)x0.size();
  Vec y0 = v.y_of(x0);
  double n0 = y0.norm();
  if (n0 < 1e-8) throw DomainError("rectification: vector field vanishes at the base point");

  // Orthonormal transversal basis: the last m-1 columns of a Householder Q
  // whose first column is Y(x0)/|Y(x0)|.
  Eigen::HouseholderQR<Mat> qr{Mat(y0)};
  Mat q = qr.householderQ() * Mat::Identity(m, m);
  Mat transversal = q.rightCols(m - 1);

  InfinitesimalTransformation vc = v;
  const GaugeAction* ga = &gauge;

  // Flow of Y alone, used by the shooting map.
  auto flow_x = [vc, tol](double s, const Vec& q0) {
    auto rhs = [&](double, const Vec& xs) { return vc.y_of(xs); };
    return integrate_ode(rhs, q0, 0.0, s, tol);
  };

  // Finds (s, w) with flow_s(x0 + U w) = x.  The target is reached by
  // homotopy continuation along the segment from x0, so the solution stays on
  // the flow-box branch that contains (s, w) = 0 instead of jumping to a
  // distant branch of a recurrent flow.
  auto locate = [flow_x, x0, transversal, m](const Vec& x) {
    auto newton = [&](Vec p, const Vec& target) {
      auto residual = [&](const Vec& par) {
        Vec q0 = x0 + transversal * par.tail(m - 1);
        return Vec(flow_x(par[0], q0) - target);
      };
      Vec r = residual(p);
      for (int iter = 0; iter < 60; ++iter) {
        double rn = r.lpNorm<Eigen::Infinity>();
        if (rn <= 1e-11 * (1 + target.lpNorm<Eigen::Infinity>())) return p;
        Mat j = fd_jacobian(residual, p);
        Vec step = j.colPivHouseholderQr().solve(-r);
        double lambda = 1.0;
        while (lambda >= 1e-4) {
          Vec cand = p + lambda * step;
          Vec rc = residual(cand);
          if (rc.lpNorm<Eigen::Infinity>() < rn) {
            p = cand;
            r = rc;
            break;
          }
          lambda /= 2;
        }
        if (lambda < 1e-4) throw ConvergenceError("rectification: shooting stalled");
      }
      throw ConvergenceError("rectification: shooting did not converge");
    };
    const int stages = 16;
    Vec p = Vec::Zero(m);
    for (int stage = 1; stage <= stages; ++stage)
      p = newton(p, Vec(x0 + (double(stage) / stages) * (x - x0)));
    return p;
  };

  // Integrates (x, B, eta) along the flow from the transversal slice, where
  // B is the identity and eta is one, with dB/ds = -L_{B*}(C(x)) and
  // deta/ds = -tau(x) eta.
  auto carry = [vc, ga, transversal, x0, tol, m](const Vec& p) {
    const LieGroupChart& group = *ga->group;
    const int gdim = group.dim;
    Vec s0(m + gdim + 1);
    s0.head(m) = x0 + transversal * p.tail(m - 1);
    s0.segment(m, gdim) = group.identity;
    s0[m + gdim] = 1.0;
    auto rhs = [&](double, const Vec& s) {
      Vec out = Vec::Zero(s.size());
      Vec xs = s.head(m);
      out.head(m) = vc.y_of(xs);
      Vec xi_vec = algebra_vector(*ga, vc.c_of(xs, ga->generators));
      out.segment(m, gdim) = -left_translate(group, s.segment(m, gdim), xi_vec);
      out[m + gdim] = -vc.tau_of(xs) * s[m + gdim];
      return out;
    };
    return integrate_ode(rhs, s0, 0.0, p[0], tol);
  };

  StochasticTransformation t;
  t.group = gauge.group;
  if (v.c) {
    const int gdim = gauge.group->dim;
    t.b_map = [locate, carry, m, gdim](const Vec& x) {
      Vec s = carry(locate(x));
      return Vec(s.segment(m, gdim));
    };
  }
  if (v.tau) {
    const int gdim = gauge.group->dim;
    t.eta = [locate, carry, m, gdim](const Vec& x) { return carry(locate(x))[m + gdim]; };
  }
  return t;
}

} // namespace liesde
