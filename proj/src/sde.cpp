#include "liesde/sde.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "liesde/ode.hpp"

namespace liesde {

namespace {

bool state_ok(const Vec& x, const std::function<bool(const Vec&)>& domain, double bound) {
  if (!x.allFinite()) return false;
  if (x.lpNorm<Eigen::Infinity>() > bound) return false;
  return !domain || domain(x);
}

Vec eval_parameter(const std::function<Vec(const PathView&)>& parameter,
                   const SemimartingalePath& noise, std::size_t k) {
  if (!parameter) return Vec();
  return parameter(PathView{&noise, k});
}

}  // namespace

GeometricalSdeMap CanonicalSdeMap::as_geometrical() const {
  GeometricalSdeMap g;
  g.state_dim = state_dim;
  g.noise_chart = noise_chart;
  const LieGroupChart* chart = noise_chart;
  auto p = psi;
  g.psi_bar = [chart, p](const Vec& x, const Vec& zp, const Vec& z, const Vec& k) {
    return p(x, chart->multiply(zp, chart->inverse(z)), k);
  };
  g.parameter = parameter;
  g.state_domain = state_domain;
  g.explosion_bound = explosion_bound;
  g.jump_shortcut = [p](const Vec& x, const Vec& dz, const Vec& k) { return p(x, dz, k); };
  return g;
}

CanonicalSdeMap MarcusSde::as_canonical() const {
  if (fields.empty()) throw std::invalid_argument("MarcusSde: no fields");
  CanonicalSdeMap c;
  c.state_dim = state_dim;
  c.noise_chart = &shared_additive_chart((int)fields.size());
  auto fs = fields;
  double tol = flow_tol;
  c.psi = [fs, tol](const Vec& x, const Vec& dz, const Vec& k) {
    (void)k;
    if (dz.lpNorm<Eigen::Infinity>() == 0) return x;
    auto field = [&](double, const Vec& y) {
      Vec v = Vec::Zero(y.size());
      for (std::size_t a = 0; a < fs.size(); ++a)
        if (dz[a] != 0) v += dz[a] * fs[a](y);
      return v;
    };
    return integrate_ode(field, x, 0.0, 1.0, tol);
  };
  return c;
}

SolutionPath solve_increment_map(const CanonicalSdeMap& sde, const SemimartingalePath& noise,
                                 const Vec& x0) {
  if (!sde.noise_chart || sde.noise_chart != noise.chart)
    throw std::invalid_argument("solve_increment_map: noise chart mismatch");
  if (!state_ok(x0, sde.state_domain, sde.explosion_bound))
    throw DomainError("solve_increment_map: x0 outside the state space");

  const LieGroupChart& chart = *noise.chart;
  SolutionPath out;
  out.grid.reserve(noise.grid.size());
  out.states.reserve(noise.grid.size());
  out.grid.push_back(noise.grid[0]);
  out.states.push_back(x0);

  for (std::size_t k = 0; k < noise.steps(); ++k) {
    Vec kval = eval_parameter(sde.parameter, noise, k);
    Vec x = out.states.back();
    const Vec& inc = noise.cont_increments[k];
    if (inc.lpNorm<Eigen::Infinity>() != 0)
      x = sde.psi(x, advance(chart, chart.identity, inc), kval);
    if (const JumpMark* m = noise.jump_at(k + 1)) {
      Vec before = x;
      x = sde.psi(x, m->jump.value, kval);
      out.jumps.emplace_back(out.grid.size(), before);
    }
    if (!state_ok(x, sde.state_domain, sde.explosion_bound)) {
      out.exploded = true;
      out.stop_time = noise.grid[k + 1];
      if (!out.jumps.empty() && out.jumps.back().first >= out.grid.size()) out.jumps.pop_back();
      return out;
    }
    out.grid.push_back(noise.grid[k + 1]);
    out.states.push_back(x);
  }
  out.stop_time = out.grid.back();
  return out;
}

namespace {

Mat fd_d1(const GeometricalSdeMap& sde, const Vec& x, const Vec& z, const Vec& k) {
  const int n = sde.noise_chart->dim;
  const int m = sde.state_dim;
  double h = std::cbrt(2.2e-16) * std::max(1.0, z.lpNorm<Eigen::Infinity>());
  Mat d(m, n);
  for (int a = 0; a < n; ++a) {
    Vec zp = z, zm = z;
    zp[a] += h;
    zm[a] -= h;
    d.col(a) = (sde.psi_bar(x, zp, z, k) - sde.psi_bar(x, zm, z, k)) / (2 * h);
  }
  return d;
}

std::vector<Mat> fd_d2(const GeometricalSdeMap& sde, const Vec& x, const Vec& z, const Vec& k) {
  const int n = sde.noise_chart->dim;
  const int m = sde.state_dim;
  double h = std::pow(2.2e-16, 0.25) * std::max(1.0, z.lpNorm<Eigen::Infinity>());
  std::vector<Mat> d(m, Mat::Zero(n, n));
  for (int a = 0; a < n; ++a) {
    Vec zp = z, zm = z;
    zp[a] += h;
    zm[a] -= h;
    Vec diag = (sde.psi_bar(x, zp, z, k) - 2 * x + sde.psi_bar(x, zm, z, k)) / (h * h);
    for (int i = 0; i < m; ++i) d[i](a, a) = diag[i];
    for (int b = a + 1; b < n; ++b) {
      Vec zpp = zp, zpm = zp, zmp = zm, zmm = zm;
      zpp[b] += h;
      zpm[b] -= h;
      zmp[b] += h;
      zmm[b] -= h;
      Vec cross = (sde.psi_bar(x, zpp, z, k) - sde.psi_bar(x, zpm, z, k) -
                   sde.psi_bar(x, zmp, z, k) + sde.psi_bar(x, zmm, z, k)) /
                  (4 * h * h);
      for (int i = 0; i < m; ++i) {
        d[i](a, b) = cross[i];
        d[i](b, a) = cross[i];
      }
    }
  }
  return d;
}

}  // namespace

SolutionPath solve_ito_taylor(const GeometricalSdeMap& sde, const SemimartingalePath& noise,
                              const Vec& x0) {
  if (!sde.noise_chart || sde.noise_chart != noise.chart)
    throw std::invalid_argument("solve_ito_taylor: noise chart mismatch");
  if (!state_ok(x0, sde.state_domain, sde.explosion_bound))
    throw DomainError("solve_ito_taylor: x0 outside the state space");

  const LieGroupChart& chart = *noise.chart;
  SolutionPath out;
  out.grid.push_back(noise.grid[0]);
  out.states.push_back(x0);

  for (std::size_t k = 0; k < noise.steps(); ++k) {
    Vec kval = eval_parameter(sde.parameter, noise, k);
    Vec x = out.states.back();
    const Vec& z = noise.values[k];
    const Vec& inc = noise.cont_increments[k];
    Vec z_pre = z;
    if (inc.lpNorm<Eigen::Infinity>() != 0) {
      z_pre = advance(chart, z, inc);
      Vec dzc = z_pre - z;  // coordinate increment of the continuous part
      Mat d1 = sde.d1 ? sde.d1(x, z, kval) : fd_d1(sde, x, z, kval);
      Vec eul = x + d1 * dzc;
      std::vector<Mat> d2 = sde.d2 ? sde.d2(x, z, kval) : fd_d2(sde, x, z, kval);
      for (int i = 0; i < sde.state_dim; ++i) eul[i] += 0.5 * dzc.dot(d2[i] * dzc);
      x = eul;
    }
    if (const JumpMark* m = noise.jump_at(k + 1)) {
      Vec before = x;
      x = sde.jump_shortcut ? sde.jump_shortcut(x, m->jump.value, kval)
                            : sde.psi_bar(x, noise.values[k + 1], z_pre, kval);
      out.jumps.emplace_back(out.grid.size(), before);
    }
    if (!state_ok(x, sde.state_domain, sde.explosion_bound)) {
      out.exploded = true;
      out.stop_time = noise.grid[k + 1];
      if (!out.jumps.empty() && out.jumps.back().first >= out.grid.size()) out.jumps.pop_back();
      return out;
    }
    out.grid.push_back(noise.grid[k + 1]);
    out.states.push_back(x);
  }
  out.stop_time = out.grid.back();
  return out;
}

GeometricalSdeMap as_affine(MatrixField sigma, int state_dim, int noise_dim) {
  GeometricalSdeMap g;
  g.state_dim = state_dim;
  g.noise_chart = &shared_additive_chart(noise_dim);
  g.psi_bar = [sigma](const Vec& x, const Vec& zp, const Vec& z, const Vec&) {
    return Vec(x + sigma(x) * (zp - z));
  };
  g.d1 = [sigma](const Vec& x, const Vec&, const Vec&) { return sigma(x); };
  g.d2 = [state_dim, noise_dim](const Vec&, const Vec&, const Vec&) {
    return std::vector<Mat>(state_dim, Mat::Zero(noise_dim, noise_dim));
  };
  return g;
}

CanonicalSdeMap as_smooth_levy(const SmoothLevySpec& spec, int state_dim) {
  const int n = 1 + spec.brownian_dim + spec.jump_dim;
  if (!spec.mu) throw std::invalid_argument("as_smooth_levy: missing drift field");
  if (spec.brownian_dim > 0 && !spec.sigma)
    throw std::invalid_argument("as_smooth_levy: missing sigma");
  if (spec.jump_dim > 0 && spec.F && spec.nu_atoms.empty() && !spec.nu_sampler &&
      spec.nu_intensity > 0)
    throw std::invalid_argument("as_smooth_levy: compensator needs atoms or a sampler");

  // freeze the compensator quadrature nodes once
  std::vector<std::pair<double, Vec>> nodes = spec.nu_atoms;
  if (nodes.empty() && spec.F && spec.nu_sampler && spec.nu_intensity > 0) {
    Rng rng(spec.mc_seed);
    double w = spec.nu_intensity / spec.mc_samples;
    for (int i = 0; i < spec.mc_samples; ++i) nodes.emplace_back(w, spec.nu_sampler(rng));
  }

  auto dF = spec.dF_dw;
  auto F = spec.F;
  int jd = spec.jump_dim;
  auto dF_eval = [dF, F, jd](const Vec& x, const Vec& w) -> Mat {
    if (dF) return dF(x, w);
    double h = std::cbrt(2.2e-16) * std::max(1.0, w.lpNorm<Eigen::Infinity>());
    Mat out(F(x, w).size(), jd);
    for (int a = 0; a < jd; ++a) {
      Vec wp = w, wm = w;
      wp[a] += h;
      wm[a] -= h;
      out.col(a) = (F(x, wp) - F(x, wm)) / (2 * h);
    }
    return out;
  };

  auto mu = spec.mu;
  auto mu_tilde = [mu, F, dF_eval, nodes](const Vec& x) {
    Vec v = mu(x);
    if (!F) return v;
    for (const auto& [mass, w] : nodes) {
      if (w.norm() > 1.0) continue;
      v -= mass * (F(x, w) - dF_eval(x, w) * w);
    }
    return v;
  };

  CanonicalSdeMap c;
  c.state_dim = state_dim;
  c.noise_chart = &shared_additive_chart(n);
  auto sigma = spec.sigma;
  int bd = spec.brownian_dim;
  c.psi = [mu_tilde, sigma, F, bd, jd](const Vec& x, const Vec& dz, const Vec&) {
    Vec out = x + mu_tilde(x) * dz[0];
    if (bd > 0) out += sigma(x) * dz.segment(1, bd);
    if (F && jd > 0) out += F(x, dz.tail(jd));
    return out;
  };
  return c;
}

double identity_defect(const GeometricalSdeMap& sde,
                       const std::vector<std::pair<Vec, Vec>>& xz_probes, const Vec& k) {
  double worst = 0;
  for (const auto& [x, z] : xz_probes)
    worst = std::max(worst, (sde.psi_bar(x, z, z, k) - x).lpNorm<Eigen::Infinity>());
  return worst;
}

double identity_defect(const CanonicalSdeMap& sde, const std::vector<Vec>& x_probes, const Vec& k) {
  double worst = 0;
  for (const auto& x : x_probes)
    worst = std::max(worst,
                     (sde.psi(x, sde.noise_chart->identity, k) - x).lpNorm<Eigen::Infinity>());
  return worst;
}

void write_csv(const SolutionPath& path, std::ostream& os) {
  const int m = path.states.empty() ? 0 : (int)path.states[0].size();
  os << "time";
  for (int i = 0; i < m; ++i) os << ",x" << i;
  os << ",jump";
  for (int i = 0; i < m; ++i) os << ",j" << i;
  os << "\n";
  std::size_t jpos = 0;
  for (std::size_t k = 0; k < path.grid.size(); ++k) {
    os << format_double(path.grid[k]);
    for (int i = 0; i < m; ++i) os << ',' << format_double(path.states[k][i]);
    while (jpos < path.jumps.size() && path.jumps[jpos].first < k) ++jpos;
    bool has = jpos < path.jumps.size() && path.jumps[jpos].first == k;
    os << ',' << (has ? 1 : 0);
    for (int i = 0; i < m; ++i)
      os << ',' << format_double(has ? path.states[k][i] - path.jumps[jpos].second[i] : 0.0);
    os << "\n";
  }
}

}  // namespace liesde
