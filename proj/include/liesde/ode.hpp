#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "liesde/linalg.hpp"

namespace liesde {

struct OdeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dormand-Prince 5(4) with adaptive step control. f(t, x) -> dx/dt.
// The local error per step is kept below tol * (1 + |x|_inf).
template <typename F>
Vec integrate_ode(F&& f, Vec x, double t0, double t1, double tol,
                  double explosion_bound = 1e12) {
  if (t1 == t0) return x;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  double t = t0;
  double h = dir * std::min(span, 0.1 * span + 1e-4);
  const int max_steps = 1000000;

  Vec k1 = f(t, x);
  for (int step = 0; step < max_steps; ++step) {
    if (dir * (t - t1) >= 0) return x;
    if (dir * (t + h - t1) > 0) h = t1 - t;

    Vec k2 = f(t + h / 5, x + (h / 5) * k1);
    Vec k3 = f(t + 3 * h / 10, x + h * (3.0 / 40 * k1 + 9.0 / 40 * k2));
    Vec k4 = f(t + 4 * h / 5, x + h * (44.0 / 45 * k1 - 56.0 / 15 * k2 + 32.0 / 9 * k3));
    Vec k5 = f(t + 8 * h / 9,
               x + h * (19372.0 / 6561 * k1 - 25360.0 / 2187 * k2 + 64448.0 / 6561 * k3 -
                        212.0 / 729 * k4));
    Vec k6 = f(t + h, x + h * (9017.0 / 3168 * k1 - 355.0 / 33 * k2 + 46732.0 / 5247 * k3 +
                               49.0 / 176 * k4 - 5103.0 / 18656 * k5));
    Vec x5 = x + h * (35.0 / 384 * k1 + 500.0 / 1113 * k3 + 125.0 / 192 * k4 -
                      2187.0 / 6784 * k5 + 11.0 / 84 * k6);
    Vec k7 = f(t + h, x5);
    Vec x4 = x + h * (5179.0 / 57600 * k1 + 7571.0 / 16695 * k3 + 393.0 / 640 * k4 -
                      92097.0 / 339200 * k5 + 187.0 / 2100 * k6 + 1.0 / 40 * k7);

    double err = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double scale = tol * (1 + std::max(std::abs(x[i]), std::abs(x5[i])));
      err = std::max(err, std::abs(x5[i] - x4[i]) / scale);
    }
    if (err <= 1.0) {
      t += h;
      x = std::move(x5);
      k1 = std::move(k7);  // FSAL
      if (x.lpNorm<Eigen::Infinity>() > explosion_bound)
        throw OdeError("ode solution exceeded explosion bound");
    }
    double factor = err > 0 ? 0.9 * std::pow(err, -0.2) : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
    if (std::abs(h) < 1e-14 * span)
      throw OdeError("ode step size underflow");
  }
  throw OdeError("ode step budget exhausted");
}

}  // namespace liesde
