#include "liesde/chart.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include <unsupported/Eigen/MatrixFunctions>

#include "liesde/ode.hpp"

namespace liesde {

double smooth_cutoff(double s, double r) {
  auto f = [](double t) { return t > 0 ? std::exp(-1.0 / t) : 0.0; };
  if (s <= r / 2) return 1.0;
  if (s >= r) return 0.0;
  double u = (r - s) / (r / 2);  // 1 at s=r/2, 0 at s=r
  double a = f(u), b = f(1 - u);
  return a / (a + b);
}

double LieGroupChart::hunt(int alpha, const Vec& z) const {
  if (hunt_fn) return hunt_fn(alpha, z);
  Vec a;
  try {
    a = log_closed ? log_closed(z) : log_coords(z, *this, 1e-10);
  } catch (const std::exception&) {
    return 0.0;  // outside the exp chart: beyond the cutoff support
  }
  double n = a.norm();
  if (n >= hunt_radius) return 0.0;
  return a[alpha] * smooth_cutoff(n, hunt_radius);
}

Vec LieGroupChart::hunt_vec(const Vec& z) const {
  Vec out = Vec::Zero(dim);
  if (hunt_fn) {
    for (int a = 0; a < dim; ++a) out[a] = hunt_fn(a, z);
    return out;
  }
  Vec a;
  try {
    a = log_closed ? log_closed(z) : log_coords(z, *this, 1e-10);
  } catch (const std::exception&) {
    return out;
  }
  double n = a.norm();
  if (n >= hunt_radius) return out;
  return a * smooth_cutoff(n, hunt_radius);
}

GroupElementJump jump_of(const Vec& z_after, const Vec& z_before, const LieGroupChart& chart) {
  if (!chart.contains(z_after) || !chart.contains(z_before))
    throw DomainError("jump_of: point outside chart domain");
  return GroupElementJump{chart.multiply(z_after, chart.inverse(z_before))};
}

Vec exp_flow(const Vec& coeffs, const Vec& start, const LieGroupChart& chart, double tol) {
  if (coeffs.lpNorm<Eigen::Infinity>() == 0) return start;
  auto field = [&](double, const Vec& x) {
    Vec v = Vec::Zero(chart.dim);
    for (int a = 0; a < chart.dim; ++a)
      if (coeffs[a] != 0) v += coeffs[a] * chart.frame(a, x);
    return v;
  };
  Vec out;
  try {
    out = integrate_ode(field, start, 0.0, 1.0, tol);
  } catch (const OdeError& e) {
    throw ExplosionError(std::string("exp_flow: ") + e.what());
  }
  if (!chart.contains(out)) throw ExplosionError("exp_flow left the chart domain");
  return out;
}

bool log_exists(const Vec& z, const LieGroupChart& chart) {
  try {
    if (chart.log_closed) {
      chart.log_closed(z);
      return true;
    }
    log_coords(z, chart, 1e-8);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

Vec log_coords(const Vec& z, const LieGroupChart& chart, double tol) {
  const int n = chart.dim;
  const double inner_tol = std::min(tol * 1e-2, 1e-12);

  Vec a;
  if (chart.log_closed) {
    a = chart.log_closed(z);
  } else {
    // first-order guess: coordinates of z - 1_N in the frame at the identity
    Mat f0(n, n);
    for (int k = 0; k < n; ++k) f0.col(k) = chart.frame(k, chart.identity);
    a = f0.partialPivLu().solve(z - chart.identity);
  }

  auto residual = [&](const Vec& c) { return Vec(exp_flow(c, chart.identity, chart, inner_tol) - z); };

  Vec r = residual(a);
  double rn = r.lpNorm<Eigen::Infinity>();
  for (int iter = 0; iter < 50 && rn > tol; ++iter) {
    Mat jac(n, n);
    double h = 1e-6 * std::max(1.0, a.lpNorm<Eigen::Infinity>());
    for (int k = 0; k < n; ++k) {
      Vec ap = a, am = a;
      ap[k] += h;
      am[k] -= h;
      jac.col(k) = (residual(ap) - residual(am)) / (2 * h);
    }
    Vec da = jac.partialPivLu().solve(-r);
    double lam = 1.0;
    while (lam > 1e-4) {
      Vec cand = a + lam * da;
      Vec rc = residual(cand);
      double rcn = rc.lpNorm<Eigen::Infinity>();
      if (rcn < (1 - 0.25 * lam) * rn || rcn <= tol) {
        a = cand;
        r = rc;
        rn = rcn;
        break;
      }
      lam /= 2;
    }
    if (lam <= 1e-4) throw ConvergenceError("log_coords: damped Newton stalled");
  }
  if (rn > tol) throw ConvergenceError("log_coords: Newton did not reach tolerance");
  return a;
}

Vec advance(const LieGroupChart& chart, const Vec& z, const Vec& inc) {
  if (inc.lpNorm<Eigen::Infinity>() == 0) return z;
  if (chart.advance_closed) return chart.advance_closed(z, inc);
  return exp_flow(inc, z, chart, 1e-12);
}

LieGroupChart additive_chart(int n) {
  LieGroupChart c;
  c.dim = n;
  c.name = "R^" + std::to_string(n);
  c.identity = Vec::Zero(n);
  c.multiply = [](const Vec& a, const Vec& b) { return Vec(a + b); };
  c.inverse = [](const Vec& a) { return Vec(-a); };
  c.frame = [n](int alpha, const Vec&) { return Vec(Vec::Unit(n, alpha)); };
  c.left_frame = c.frame;
  c.log_closed = [](const Vec& z) { return z; };
  c.advance_closed = [](const Vec& z, const Vec& inc) { return Vec(z + inc); };
  c.hunt_radius = 1.0;
  c.additive = true;
  return c;
}

const LieGroupChart& shared_additive_chart(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<LieGroupChart>> registry;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = registry[n];
  if (!slot) slot = std::make_unique<LieGroupChart>(additive_chart(n));
  return *slot;
}

const LieGroupChart& shared_so2_chart() {
  static LieGroupChart chart = so2_chart();
  return chart;
}

const LieGroupChart& shared_gl_rm_chart(int n, int m) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<LieGroupChart>> registry;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = registry[{n, m}];
  if (!slot) slot = std::make_unique<LieGroupChart>(gl_rm_chart(n, m));
  return *slot;
}

namespace {

double wrap_angle(double x) {
  double w = std::remainder(x, 2 * M_PI);
  if (w <= -M_PI) w += 2 * M_PI;
  return w;
}

}  // namespace

LieGroupChart so2_chart() {
  LieGroupChart c;
  c.dim = 1;
  c.name = "SO(2)";
  c.identity = Vec::Zero(1);
  c.multiply = [](const Vec& a, const Vec& b) {
    Vec out(1);
    out[0] = wrap_angle(a[0] + b[0]);
    return out;
  };
  c.inverse = [](const Vec& a) {
    Vec out(1);
    out[0] = wrap_angle(-a[0]);
    return out;
  };
  c.frame = [](int, const Vec&) { return Vec(Vec::Ones(1)); };
  c.left_frame = c.frame;
  c.log_closed = [](const Vec& z) {
    Vec out(1);
    out[0] = wrap_angle(z[0]);
    return out;
  };
  c.advance_closed = [](const Vec& z, const Vec& inc) {
    Vec out(1);
    out[0] = wrap_angle(z[0] + inc[0]);
    return out;
  };
  c.hunt_radius = M_PI / 2;
  return c;
}

namespace {

Mat as_matrix(const Vec& z, int n) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             z.data(), n, n)
      .eval();
}

Vec as_coords(const Mat& m) {
  Vec out(m.size());
  int n = (int)m.rows();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < (int)m.cols(); ++j) out[i * m.cols() + j] = m(i, j);
  return out;
}

}  // namespace

LieGroupChart gl_chart(int n) {
  LieGroupChart c;
  c.dim = n * n;
  c.name = "GL(" + std::to_string(n) + ")";
  c.identity = as_coords(Mat::Identity(n, n));
  c.multiply = [n](const Vec& a, const Vec& b) { return as_coords(as_matrix(a, n) * as_matrix(b, n)); };
  c.in_domain = [n](const Vec& a) { return std::abs(as_matrix(a, n).determinant()) > 1e-12; };
  c.inverse = [n](const Vec& a) {
    Mat m = as_matrix(a, n);
    if (std::abs(m.determinant()) <= 1e-12) throw DomainError("gl inverse: singular matrix");
    return as_coords(m.inverse().eval());
  };
  // right-invariant frame E_ij * Z; coordinates are row-major entries
  c.frame = [n](int alpha, const Vec& z) {
    int i = alpha / n, j = alpha % n;
    Mat m = as_matrix(z, n);
    Mat out = Mat::Zero(n, n);
    out.row(i) = m.row(j);
    return as_coords(out);
  };
  c.left_frame = [n](int alpha, const Vec& z) {
    int i = alpha / n, j = alpha % n;
    Mat m = as_matrix(z, n);
    Mat out = Mat::Zero(n, n);
    out.col(j) = m.col(i);
    return as_coords(out);
  };
  c.log_closed = [n](const Vec& z) {
    Mat m = as_matrix(z, n);
    Eigen::EigenSolver<Mat> es(m, false);
    for (int k = 0; k < n; ++k) {
      auto ev = es.eigenvalues()[k];
      if (ev.real() <= 0 && std::abs(ev.imag()) < 1e-14 * (1 + std::abs(ev)))
        throw DomainError("gl log: eigenvalue on the closed negative real axis");
    }
    return as_coords(m.log().eval());
  };
  c.hunt_radius = 0.5;
  return c;
}

LieGroupChart product_chart(LieGroupChart a, LieGroupChart b, const std::string& name) {
  LieGroupChart c;
  c.dim = a.dim + b.dim;
  c.name = name.empty() ? a.name + " x " + b.name : name;
  c.identity = Vec(c.dim);
  c.identity << a.identity, b.identity;
  int da = a.dim, db = b.dim;
  auto head = [da](const Vec& z) { return Vec(z.head(da)); };
  auto tail = [da, db](const Vec& z) { return Vec(z.segment(da, db)); };
  auto join = [](const Vec& u, const Vec& v) {
    Vec out(u.size() + v.size());
    out << u, v;
    return out;
  };
  c.multiply = [=](const Vec& x, const Vec& y) {
    return join(a.multiply(head(x), head(y)), b.multiply(tail(x), tail(y)));
  };
  c.inverse = [=](const Vec& x) { return join(a.inverse(head(x)), b.inverse(tail(x))); };
  c.frame = [=](int alpha, const Vec& z) {
    Vec out = Vec::Zero(da + db);
    if (alpha < da)
      out.head(da) = a.frame(alpha, head(z));
    else
      out.segment(da, db) = b.frame(alpha - da, tail(z));
    return out;
  };
  c.left_frame = [=](int alpha, const Vec& z) {
    Vec out = Vec::Zero(da + db);
    if (alpha < da)
      out.head(da) = a.left_frame(alpha, head(z));
    else
      out.segment(da, db) = b.left_frame(alpha - da, tail(z));
    return out;
  };
  if (a.in_domain || b.in_domain) {
    c.in_domain = [=](const Vec& z) { return a.contains(head(z)) && b.contains(tail(z)); };
  }
  if (a.log_closed && b.log_closed) {
    c.log_closed = [=](const Vec& z) { return join(a.log_closed(head(z)), b.log_closed(tail(z))); };
  }
  c.advance_closed = [=](const Vec& z, const Vec& inc) {
    return join(advance(a, head(z), head(inc)), advance(b, tail(z), tail(inc)));
  };
  c.hunt_radius = std::min(a.hunt_radius, b.hunt_radius);
  c.additive = a.additive && b.additive;
  return c;
}

LieGroupChart gl_rm_chart(int n, int m) {
  return product_chart(gl_chart(n), additive_chart(m),
                       "GL(" + std::to_string(n) + ") x R^" + std::to_string(m));
}

}  // namespace liesde
