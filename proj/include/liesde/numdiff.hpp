#pragma once

#include <cmath>
#include <functional>

#include "liesde/chart.hpp"

namespace liesde {

// Central-difference step scaled to the argument; cbrt(eps) balances the
// truncation and rounding error of a second-order difference.
inline double fd_step(const Vec& x) {
  return std::cbrt(2.220446049250313e-16) * std::max(1.0, x.lpNorm<Eigen::Infinity>());
}

inline Vec dir_derivative(const std::function<Vec(const Vec&)>& f, const Vec& x, const Vec& dir) {
  double scale = dir.lpNorm<Eigen::Infinity>();
  if (scale == 0) return Vec(Vec::Zero(f(x).size()));
  double h = fd_step(x) / scale;
  return ((f(x + h * dir) - f(x - h * dir)) / (2 * h)).eval();
}

inline double dir_derivative_scalar(const std::function<double(const Vec&)>& f, const Vec& x,
                                    const Vec& dir) {
  double scale = dir.lpNorm<Eigen::Infinity>();
  if (scale == 0) return 0.0;
  double h = fd_step(x) / scale;
  return (f(x + h * dir) - f(x - h * dir)) / (2 * h);
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x) {
  double h = fd_step(x);
  Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vec xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    j.col(c) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

}  // namespace liesde
