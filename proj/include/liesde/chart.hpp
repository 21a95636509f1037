#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "liesde/linalg.hpp"

namespace liesde {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExplosionError : std::runtime_error {
  double stop_time;
  explicit ExplosionError(const std::string& msg, double t = 0)
      : std::runtime_error(msg), stop_time(t) {}
};

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A Lie group realized in one global coordinate chart. `frame` is the
// right-invariant frame Y_1..Y_n (coefficient functions), `left_frame` its
// left-invariant counterpart, used by the transformation calculus. Optional
// closed forms (log, continuous advance) are exact shortcuts; the generic
// operations below never require them.
struct LieGroupChart {
  int dim = 0;
  std::string name;
  Vec identity;
  std::function<Vec(const Vec&, const Vec&)> multiply;
  std::function<Vec(const Vec&)> inverse;
  std::function<Vec(int, const Vec&)> frame;
  std::function<Vec(int, const Vec&)> left_frame;
  std::function<bool(const Vec&)> in_domain;             // null: everywhere
  std::function<Vec(const Vec&)> log_closed;             // null: Newton on exp_flow
  std::function<Vec(const Vec&, const Vec&)> advance_closed;
  std::function<double(int, const Vec&)> hunt_fn;        // null: cutoff default
  double hunt_radius = 1.0;
  bool additive = false;  // multiply is coordinate-wise addition

  bool contains(const Vec& z) const { return !in_domain || in_domain(z); }
  double hunt(int alpha, const Vec& z) const;
  Vec hunt_vec(const Vec& z) const;
};

struct GroupElementJump {
  Vec value;
};

GroupElementJump jump_of(const Vec& z_after, const Vec& z_before, const LieGroupChart& chart);

// time-1 flow of coeffs^alpha * Y_alpha from `start`
Vec exp_flow(const Vec& coeffs, const Vec& start, const LieGroupChart& chart, double tol = 1e-12);

// inverse of a -> exp_flow(a, identity), by damped Newton
Vec log_coords(const Vec& z, const LieGroupChart& chart, double tol = 1e-10);
bool log_exists(const Vec& z, const LieGroupChart& chart);

// continuous-part advance of a path value by a frame-coordinate increment
Vec advance(const LieGroupChart& chart, const Vec& z, const Vec& inc);

// C-infinity cutoff: 1 on [0, r/2], 0 on [r, inf)
double smooth_cutoff(double s, double r);

// directional derivative of f along the vector field with coefficients v at z
template <typename F>
double directional_derivative(F&& f, const Vec& z, const Vec& v) {
  double h = std::cbrt(2.2e-16) * std::max(1.0, z.lpNorm<Eigen::Infinity>());
  return (f(z + h * v) - f(z - h * v)) / (2 * h);
}

LieGroupChart additive_chart(int n);
// process-wide chart with a stable address, for samplers that return paths
const LieGroupChart& shared_additive_chart(int n);
const LieGroupChart& shared_so2_chart();
const LieGroupChart& shared_gl_rm_chart(int n, int m);
LieGroupChart so2_chart();
LieGroupChart gl_chart(int n);
LieGroupChart product_chart(LieGroupChart a, LieGroupChart b, const std::string& name = "");

// chart for GL(n) x R^m with matrix entries then vector entries as coordinates
LieGroupChart gl_rm_chart(int n, int m);

}  // namespace liesde
