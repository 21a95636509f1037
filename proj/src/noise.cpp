#include "liesde/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace liesde {

void LevyTriplet::validate() const {
  if (!chart) throw std::invalid_argument("LevyTriplet: missing chart");
  if (b0.size() != chart->dim || A0.rows() != chart->dim || A0.cols() != chart->dim)
    throw std::invalid_argument("LevyTriplet: dimension mismatch");
  if ((A0 - A0.transpose()).lpNorm<Eigen::Infinity>() > 1e-12)
    throw std::invalid_argument("LevyTriplet: A0 not symmetric");
  if (jump_intensity < 0) throw std::invalid_argument("LevyTriplet: negative jump intensity");
  if (jump_intensity > 0 && !jump_sampler)
    throw std::invalid_argument("LevyTriplet: jump intensity without a sampler");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A0 + A0.transpose()));
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("LevyTriplet: A0 not positive semidefinite");
}

Mat psd_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  Vec ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-12) throw std::invalid_argument("psd_sqrt: negative eigenvalue");
  Vec root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Vec hunt_mean_mc(const LevyTriplet& triplet, std::uint64_t seed, int samples) {
  Rng rng(seed);
  Vec acc = Vec::Zero(triplet.chart->dim);
  for (int i = 0; i < samples; ++i) acc += triplet.chart->hunt_vec(triplet.jump_sampler(rng));
  return acc / samples;
}

namespace {

std::vector<double> base_grid(double horizon, double step) {
  if (!(step > 0) || !(horizon >= step))
    throw std::invalid_argument("noise sampler: need 0 < step <= horizon");
  std::vector<double> g{0.0};
  for (std::size_t k = 1; k * step < horizon * (1 - 1e-12); ++k) g.push_back(k * step);
  g.push_back(horizon);
  return g;
}

}  // namespace

SemimartingalePath sample_levy(const LevyTriplet& triplet, double horizon, double step,
                               std::uint64_t seed) {
  triplet.validate();
  const LieGroupChart& chart = *triplet.chart;
  const int n = chart.dim;
  Rng rng(seed);

  Vec drift = triplet.b0;
  if (triplet.jump_intensity > 0) {
    Vec m = triplet.hunt_mean ? *triplet.hunt_mean
                              : hunt_mean_mc(triplet, seed ^ 0xC2B2AE3D27D4EB4FULL);
    drift -= triplet.jump_intensity * m;
  }

  std::vector<double> jump_times;
  std::vector<Vec> jump_elements;
  if (triplet.jump_intensity > 0) {
    double t = rng.exponential(triplet.jump_intensity);
    while (t < horizon) {
      jump_times.push_back(t);
      jump_elements.push_back(triplet.jump_sampler(rng));
      t += rng.exponential(triplet.jump_intensity);
    }
  }

  SemimartingalePath p;
  p.chart = &chart;
  p.grid = base_grid(horizon, step);
  // jump times are increasing, so each insertion lands at or after every
  // index assigned so far and earlier marks stay valid
  for (std::size_t j = 0; j < jump_times.size(); ++j) {
    auto it = std::lower_bound(p.grid.begin(), p.grid.end(), jump_times[j]);
    std::size_t idx = (std::size_t)(it - p.grid.begin());
    if (it == p.grid.end() || *it != jump_times[j])
      p.grid.insert(it, jump_times[j]);
    else if (idx == 0)
      continue;  // jump exactly at t0: measure-zero corner, drop
    if (!p.jumps.empty() && p.jumps.back().index == idx)
      p.jumps.back().jump.value = chart.multiply(jump_elements[j], p.jumps.back().jump.value);
    else
      p.jumps.push_back({jump_times[j], idx, GroupElementJump{jump_elements[j]}});
  }

  const bool diffuse = triplet.A0.lpNorm<Eigen::Infinity>() > 0;
  Mat s;
  if (diffuse) s = psd_sqrt(triplet.A0);
  p.cont_increments.resize(p.steps());
  for (std::size_t k = 0; k < p.steps(); ++k) {
    double dt = p.grid[k + 1] - p.grid[k];
    Vec inc = drift * dt;
    if (diffuse) inc += s * rng.normal_vec(n) * std::sqrt(dt);
    p.cont_increments[k] = inc;
  }
  p.values.assign(p.grid.size(), chart.identity);
  replay(p);
  return p;
}

SemimartingalePath sample_brownian(int dim, double horizon, double step, std::uint64_t seed) {
  LevyTriplet t;
  t.chart = &shared_additive_chart(dim);
  t.b0 = Vec::Zero(dim);
  t.A0 = Mat::Identity(dim, dim);
  return sample_levy(t, horizon, step, seed);
}

double alpha_stable_intensity(double alpha, int dim, bool isotropic, double eps) {
  if (dim == 1) return 2 * std::pow(eps, -alpha) / alpha;
  if (isotropic) return 2 * M_PI * std::pow(eps, -alpha) / alpha;
  return 2 * dim * std::pow(eps, -alpha) / alpha;  // independent axis components
}

SemimartingalePath sample_alpha_stable(double alpha, int dim, bool isotropic, double horizon,
                                       double step, double eps, std::uint64_t seed) {
  if (!(alpha > 0) || alpha > 2) throw std::invalid_argument("alpha must lie in (0, 2]");
  if (dim != 1 && dim != 2) throw std::invalid_argument("alpha-stable sampler supports dim 1 or 2");
  if (alpha == 2) return sample_brownian(dim, horizon, step, seed);
  if (!(eps > 0)) throw std::invalid_argument("alpha < 2 requires a positive truncation");

  LevyTriplet t;
  t.chart = &shared_additive_chart(dim);
  t.b0 = Vec::Zero(dim);
  t.A0 = Mat::Zero(dim, dim);
  t.jump_intensity = alpha_stable_intensity(alpha, dim, isotropic, eps);
  t.hunt_mean = Vec::Zero(dim);  // symmetric law
  t.jump_sampler = [alpha, dim, isotropic, eps](Rng& rng) {
    double r = eps * std::pow(rng.uniform01(), -1.0 / alpha);
    Vec j = Vec::Zero(dim);
    if (dim == 1) {
      j[0] = rng.uniform01() < 0.5 ? -r : r;
    } else if (isotropic) {
      double th = rng.uniform(0, 2 * M_PI);
      j[0] = r * std::cos(th);
      j[1] = r * std::sin(th);
    } else {
      int axis = rng.uniform01() < 0.5 ? 0 : 1;
      j[axis] = rng.uniform01() < 0.5 ? -r : r;
    }
    return j;
  };
  return sample_levy(t, horizon, step, seed);
}

SemimartingalePath sample_discrete_iterated(const LieGroupChart& group,
                                            const std::function<std::pair<Mat, Vec>(Rng&)>& step_law,
                                            int steps, std::uint64_t seed, bool resample_singular) {
  Rng rng(seed);
  const int total = group.dim;
  SemimartingalePath p;
  p.chart = &group;
  p.grid.resize(steps + 1);
  for (int k = 0; k <= steps; ++k) p.grid[k] = k;
  p.cont_increments.assign(steps, Vec::Zero(total));
  for (int k = 1; k <= steps; ++k) {
    Mat kmat;
    Vec h;
    for (int tries = 0;; ++tries) {
      std::tie(kmat, h) = step_law(rng);
      if (std::abs(kmat.determinant()) > 1e-12) break;
      if (!resample_singular || tries >= 64)
        throw DomainError("sample_discrete_iterated: singular map sample");
    }
    const int m = (int)kmat.rows();
    if (m * m + (int)h.size() != total)
      throw std::invalid_argument("sample_discrete_iterated: step law dimension mismatch");
    Vec j(total);
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < m; ++c) j[i * m + c] = kmat(i, c);
    j.tail(h.size()) = h;
    p.jumps.push_back({(double)k, (std::size_t)k, GroupElementJump{j}});
  }
  p.values.assign(p.grid.size(), group.identity);
  replay(p);
  return p;
}

double cms_stable_sample(double alpha, Rng& rng) {
  double v = rng.uniform(-M_PI / 2, M_PI / 2);
  double w = rng.exponential(1.0);
  if (alpha == 1.0) return std::tan(v);
  double s = std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha);
  double c = std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
  return s * c;
}

}  // namespace liesde
