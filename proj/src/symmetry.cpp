#include "liesde/symmetry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>

#include "liesde/numdiff.hpp"

namespace liesde {

namespace {

// ---------------------------------------------------------------------------
// Low-discrepancy sampling and parallel evaluation
// ---------------------------------------------------------------------------

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

// Radical-inverse (van der Corput) value of `index` in the given base.
double radical_inverse(std::uint64_t index, int base) {
  double inv = 1.0 / base, value = 0.0, scale = inv;
  while (index > 0) {
    value += scale * static_cast<double>(index % base);
    index /= base;
    scale *= inv;
  }
  return value;
}

// Halton point in [0,1)^dims; `dim_offset` selects which prime bases are
// used so that independent streams do not collide.
Vec halton_point(std::uint64_t index, int dims, int dim_offset) {
  if (dims + dim_offset > static_cast<int>(sizeof(kPrimes) / sizeof(int)))
    throw std::logic_error("symmetry grid: dimension exceeds the prime table");
  Vec p(dims);
  for (int d = 0; d < dims; ++d) p[d] = radical_inverse(index, kPrimes[d + dim_offset]);
  return p;
}

// Order-preserving parallel loop over grid points.  Evaluations are
// independent per the module contract (callbacks must be pure); per-point
// domain failures are handled inside `body`, anything else is rethrown.
template <typename F>
void parallel_points(std::size_t count, F&& body) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = std::min<std::size_t>(hw ? hw : 1, count / 32);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (!failed.load(std::memory_order_relaxed)) {
        std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Shared residual evaluation
// ---------------------------------------------------------------------------

// Value and full first derivatives of the one-increment map at one point.
struct PointDerivs {
  Vec px;
  Mat d_state;
  Mat d_noise;
};

PointDerivs point_derivs(const CanonicalSdeMap& sde, const Vec& x, const Vec& z, const Vec& k,
                         const SdeJacobians* jac) {
  PointDerivs out;
  out.px = sde.psi(x, z, k);
  if (!out.px.allFinite()) throw DomainError("determining residual: non-finite map value");
  if (jac) {
    out.d_state = jac->d_state(x, z, k);
    out.d_noise = jac->d_noise(x, z, k);
  } else {
    out.d_state = fd_jacobian([&](const Vec& xx) { return sde.psi(xx, z, k); }, x);
    out.d_noise = fd_jacobian([&](const Vec& zz) { return sde.psi(x, zz, k); }, z);
  }
  if (!out.d_state.allFinite() || !out.d_noise.allFinite())
    throw DomainError("determining residual: non-finite derivative");
  return out;
}

// The determining expression for one V at one prepared point.  The tau and C
// terms are dropped when the corresponding action is absent.
Vec residual_of(const InfinitesimalTransformation& v, const GaugeAction* gauge,
                const TimeAction* time, const PointDerivs& pd, const Vec& x, const Vec& z) {
  Vec res = v.y_of(pd.px) - pd.d_state * v.y_of(x);
  Vec w = Vec::Zero(z.size());
  bool noise_term = false;
  if (v.tau && time) {
    w += v.tau(x) * time->generator_h(z);
    noise_term = true;
  }
  if (v.c && gauge) {
    Vec c = v.c(x);
    for (int l = 0; l < gauge->generators; ++l)
      if (c[l] != 0) w += c[l] * gauge->generator(l, z);
    noise_term = true;
  }
  if (noise_term) res -= pd.d_noise * w;
  if (!res.allFinite()) throw DomainError("determining residual: non-finite residual");
  return res;
}

std::string mode_name(const SdeJacobians* jac) {
  return jac ? "analytic" : "finite-difference";
}

nlohmann::json vec_json(const Vec& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

std::vector<GridPoint> symmetry_grid(const SymmetryGridSpec& spec, int state_dim,
                                     const LieGroupChart& noise) {
  if (state_dim <= 0 || spec.states_per_dim <= 0)
    throw std::invalid_argument("symmetry grid: positive dimensions required");
  const int n = noise.dim;
  const double span = spec.state_upper - spec.state_lower;

  auto box_state = [&](const Vec& unit) {
    return Vec(spec.state_lower + span * unit.array());
  };
  auto ball_noise = [&](const Vec& unit) {
    Vec coeffs = spec.noise_scale * (2.0 * unit.array() - 1.0);
    return exp_flow(coeffs, noise.identity, noise);
  };

  // States: full tensor product, or a low-discrepancy set of the same budget
  // when the product would blow up.
  std::vector<Vec> states;
  long long tensor = 1;
  for (int d = 0; d < state_dim && tensor <= spec.max_tensor_states; ++d)
    tensor *= spec.states_per_dim;
  if (tensor <= spec.max_tensor_states) {
    std::vector<int> idx(state_dim, 0);
    while (true) {
      Vec x(state_dim);
      for (int d = 0; d < state_dim; ++d)
        x[d] = spec.states_per_dim == 1
                   ? 0.5 * (spec.state_lower + spec.state_upper)
                   : spec.state_lower + span * idx[d] / (spec.states_per_dim - 1);
      states.push_back(x);
      int d = 0;
      while (d < state_dim && ++idx[d] == spec.states_per_dim) idx[d++] = 0;
      if (d == state_dim) break;
    }
  } else {
    for (int i = 0; i < spec.max_tensor_states; ++i)
      states.push_back(box_state(halton_point(i + 1, state_dim, 0)));
  }

  std::vector<Vec> noises;
  noises.reserve(spec.noise_points);
  for (int i = 0; i < spec.noise_points; ++i)
    noises.push_back(ball_noise(halton_point(i + 1, n, 0)));

  std::vector<GridPoint> grid;
  grid.reserve(states.size() * noises.size() + spec.extra_points);
  for (const Vec& x : states)
    for (const Vec& z : noises) grid.emplace_back(x, z);

  // Joint low-discrepancy tail: state and noise coordinates drawn from one
  // higher-dimensional stream so the pairs are not a product set.
  for (int i = 0; i < spec.extra_points; ++i) {
    Vec u = halton_point(i + 1, state_dim + n, 1);
    grid.emplace_back(box_state(u.head(state_dim)), ball_noise(u.tail(n)));
  }
  return grid;
}

std::vector<GridPoint> filter_grid(const CanonicalSdeMap& sde, std::vector<GridPoint> grid) {
  auto outside = [&](const GridPoint& p) {
    if (!p.first.allFinite() || !p.second.allFinite()) return true;
    if (sde.state_domain && !sde.state_domain(p.first)) return true;
    return sde.noise_chart && !sde.noise_chart->contains(p.second);
  };
  grid.erase(std::remove_if(grid.begin(), grid.end(), outside), grid.end());
  return grid;
}

// ---------------------------------------------------------------------------
// Determining residual
// ---------------------------------------------------------------------------

DeterminingResidualReport determining_residual(const CanonicalSdeMap& sde,
                                               const InfinitesimalTransformation& v,
                                               const GaugeAction* gauge, const TimeAction* time,
                                               const std::vector<GridPoint>& grid,
                                               const SdeJacobians* jac, const Vec& parameter) {
  DeterminingResidualReport report;
  report.derivative_mode = mode_name(jac);

  std::vector<std::optional<Vec>> slots(grid.size());
  parallel_points(grid.size(), [&](std::size_t i) {
    try {
      PointDerivs pd = point_derivs(sde, grid[i].first, grid[i].second, parameter, jac);
      slots[i] = residual_of(v, gauge, time, pd, grid[i].first, grid[i].second);
    } catch (const std::runtime_error&) {
      // point flagged below
    }
  });

  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!slots[i]) {
      ++report.flagged;
      continue;
    }
    report.grid.push_back(grid[i]);
    report.residuals.push_back(*slots[i]);
    report.sup_norm = std::max(report.sup_norm, slots[i]->lpNorm<Eigen::Infinity>());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Finite symmetry check
// ---------------------------------------------------------------------------

FiniteSymmetryReport finite_symmetry_check(const CanonicalSdeMap& sde,
                                           const StochasticTransformation& t,
                                           const GaugeAction* gauge, const TimeAction* time,
                                           const std::vector<GridPoint>& grid, double tolerance,
                                           const Vec& parameter) {
  FiniteSymmetryReport report;
  report.tolerance = tolerance;
  CanonicalSdeMap moved = e_action(t, sde, gauge, time);

  std::vector<std::optional<double>> slots(grid.size());
  parallel_points(grid.size(), [&](std::size_t i) {
    try {
      Vec lhs = moved.psi(grid[i].first, grid[i].second, parameter);
      Vec rhs = sde.psi(grid[i].first, grid[i].second, parameter);
      if (!lhs.allFinite() || !rhs.allFinite()) return;
      slots[i] = (lhs - rhs).lpNorm<Eigen::Infinity>();
    } catch (const std::runtime_error&) {
    }
  });

  for (const auto& s : slots) {
    if (!s) {
      ++report.flagged;
      continue;
    }
    report.max_deviation = std::max(report.max_deviation, *s);
  }
  report.pass = report.max_deviation < tolerance && report.flagged == 0;
  return report;
}

// ---------------------------------------------------------------------------
// Flow-derivative cross-check
// ---------------------------------------------------------------------------

FlowDerivativeReport infinitesimal_via_flow(const CanonicalSdeMap& sde,
                                            const InfinitesimalTransformation& v,
                                            const GaugeAction* gauge, const TimeAction* time,
                                            const std::vector<GridPoint>& grid, double a_step,
                                            const SdeJacobians* jac, const Vec& parameter) {
  if (a_step <= 0) throw std::invalid_argument("flow cross-check: a_step must be positive");
  FlowDerivativeReport report;
  CanonicalSdeMap plus = e_action(flow_transformation(v, a_step, gauge), sde, gauge, time);
  CanonicalSdeMap minus = e_action(flow_transformation(v, -a_step, gauge), sde, gauge, time);

  std::vector<std::optional<std::pair<Vec, double>>> slots(grid.size());
  parallel_points(grid.size(), [&](std::size_t i) {
    try {
      const Vec& x = grid[i].first;
      const Vec& z = grid[i].second;
      Vec diff = (plus.psi(x, z, parameter) - minus.psi(x, z, parameter)) / (2 * a_step);
      if (!diff.allFinite()) return;
      PointDerivs pd = point_derivs(sde, x, z, parameter, jac);
      Vec res = residual_of(v, gauge, time, pd, x, z);
      slots[i] = std::make_pair(diff, (diff - res).lpNorm<Eigen::Infinity>());
    } catch (const std::runtime_error&) {
    }
  });

  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!slots[i]) {
      ++report.flagged;
      continue;
    }
    report.grid.push_back(grid[i]);
    report.derivatives.push_back(slots[i]->first);
    report.sup_norm = std::max(report.sup_norm, slots[i]->first.lpNorm<Eigen::Infinity>());
    report.max_mismatch = std::max(report.max_mismatch, slots[i]->second);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Least-squares fitting
// ---------------------------------------------------------------------------

InfinitesimalTransformation SymmetryAnsatz::combine(const Vec& coeffs) const {
  if (coeffs.size() != static_cast<Eigen::Index>(basis.size()))
    throw std::invalid_argument("ansatz: coefficient count does not match the basis");
  InfinitesimalTransformation out;
  bool has_y = false, has_c = false, has_tau = false;
  int gen = 0;
  for (const auto& b : basis) {
    out.state_dim = std::max(out.state_dim, b.state_dim);
    has_y = has_y || static_cast<bool>(b.y);
    has_tau = has_tau || static_cast<bool>(b.tau);
    if (b.c) {
      has_c = true;
      if (gen == 0) gen = static_cast<int>(b.c(Vec::Zero(b.state_dim)).size());
    }
  }
  std::vector<InfinitesimalTransformation> parts = basis;
  std::vector<double> weights(coeffs.data(), coeffs.data() + coeffs.size());
  if (has_y)
    out.y = [parts, weights](const Vec& x) {
      Vec sum = Vec::Zero(x.size());
      for (std::size_t i = 0; i < parts.size(); ++i)
        if (parts[i].y && weights[i] != 0) sum += weights[i] * parts[i].y(x);
      return sum;
    };
  if (has_c)
    out.c = [parts, weights, gen](const Vec& x) {
      Vec sum = Vec::Zero(gen);
      for (std::size_t i = 0; i < parts.size(); ++i)
        if (parts[i].c && weights[i] != 0) sum += weights[i] * parts[i].c(x);
      return sum;
    };
  if (has_tau)
    out.tau = [parts, weights](const Vec& x) {
      double sum = 0;
      for (std::size_t i = 0; i < parts.size(); ++i)
        if (parts[i].tau && weights[i] != 0) sum += weights[i] * parts[i].tau(x);
      return sum;
    };
  return out;
}

SymmetryAnsatz linear_ansatz(int state_dim, int gauge_generators, bool with_constant_y,
                             bool with_tau) {
  if (state_dim <= 0) throw std::invalid_argument("ansatz: positive state dimension required");
  SymmetryAnsatz ansatz;
  for (int i = 0; i < state_dim; ++i)
    for (int j = 0; j < state_dim; ++j) {
      InfinitesimalTransformation v;
      v.state_dim = state_dim;
      v.y = [i, j, state_dim](const Vec& x) {
        Vec out = Vec::Zero(state_dim);
        out[i] = x[j];
        return out;
      };
      ansatz.basis.push_back(std::move(v));
      ansatz.labels.push_back("Y^" + std::to_string(i) + "=x^" + std::to_string(j));
    }
  if (with_constant_y)
    for (int i = 0; i < state_dim; ++i) {
      InfinitesimalTransformation v;
      v.state_dim = state_dim;
      v.y = [i, state_dim](const Vec&) {
        Vec out = Vec::Zero(state_dim);
        out[i] = 1;
        return out;
      };
      ansatz.basis.push_back(std::move(v));
      ansatz.labels.push_back("Y^" + std::to_string(i) + "=1");
    }
  for (int l = 0; l < gauge_generators; ++l) {
    InfinitesimalTransformation v;
    v.state_dim = state_dim;
    v.c = [l, gauge_generators](const Vec&) {
      Vec out = Vec::Zero(gauge_generators);
      out[l] = 1;
      return out;
    };
    ansatz.basis.push_back(std::move(v));
    ansatz.labels.push_back("C^" + std::to_string(l) + "=1");
  }
  if (with_tau) {
    InfinitesimalTransformation v;
    v.state_dim = state_dim;
    v.tau = [](const Vec&) { return 1.0; };
    ansatz.basis.push_back(std::move(v));
    ansatz.labels.push_back("tau=1");
  }
  return ansatz;
}

FitSymmetryResult fit_symmetry(const CanonicalSdeMap& sde, const SymmetryAnsatz& ansatz,
                               const GaugeAction* gauge, const TimeAction* time,
                               const std::vector<GridPoint>& grid, const SdeJacobians* jac,
                               const Vec& parameter, double rank_tolerance) {
  const int cols = ansatz.size();
  if (cols == 0) throw std::invalid_argument("fit: empty ansatz");
  const int m = sde.state_dim;

  // One residual block (m rows) per grid point; a point failing for any
  // basis element is dropped whole so rows stay aligned.
  std::vector<std::optional<Mat>> slots(grid.size());
  parallel_points(grid.size(), [&](std::size_t i) {
    try {
      PointDerivs pd = point_derivs(sde, grid[i].first, grid[i].second, parameter, jac);
      Mat block(m, cols);
      for (int j = 0; j < cols; ++j)
        block.col(j) = residual_of(ansatz.basis[j], gauge, time, pd, grid[i].first, grid[i].second);
      slots[i] = std::move(block);
    } catch (const std::runtime_error&) {
    }
  });

  FitSymmetryResult result;
  result.rank_tolerance = rank_tolerance;
  std::vector<const Mat*> blocks;
  for (const auto& s : slots) {
    if (!s) {
      ++result.flagged;
      continue;
    }
    blocks.push_back(&*s);
  }
  result.equations = static_cast<int>(blocks.size()) * m;
  if (result.equations < cols)
    throw std::invalid_argument("fit: more unknown coefficients than grid equations");

  Mat system(result.equations, cols);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    system.middleRows(static_cast<Eigen::Index>(b) * m, m) = *blocks[b];

  Eigen::JacobiSVD<Mat> svd(system, Eigen::ComputeThinV);
  result.singular_values = svd.singularValues();
  const double cutoff = rank_tolerance * result.singular_values[0];

  auto sign_fixed = [](Vec dir) {
    Eigen::Index at = 0;
    dir.cwiseAbs().maxCoeff(&at);
    if (dir[at] < 0) dir = -dir;
    return dir;
  };
  for (int j = 0; j < cols; ++j) {
    if (result.singular_values[j] > cutoff)
      ++result.rank;
    else
      result.null_directions.push_back(sign_fixed(svd.matrixV().col(j)));
  }
  result.best_direction = sign_fixed(svd.matrixV().col(cols - 1));
  result.best_residual = (system * result.best_direction).lpNorm<Eigen::Infinity>();
  return result;
}

// ---------------------------------------------------------------------------
// JSON summaries
// ---------------------------------------------------------------------------

nlohmann::json to_json(const DeterminingResidualReport& report, bool include_points) {
  nlohmann::json j{{"sup_norm", report.sup_norm},
                   {"derivative_mode", report.derivative_mode},
                   {"evaluated", report.grid.size()},
                   {"flagged", report.flagged},
                   {"necessity_assumes_full_jumps", report.necessity_assumes_full_jumps}};
  if (include_points) {
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t i = 0; i < report.grid.size(); ++i)
      points.push_back({{"x", vec_json(report.grid[i].first)},
                        {"z", vec_json(report.grid[i].second)},
                        {"residual", vec_json(report.residuals[i])}});
    j["points"] = std::move(points);
  }
  return j;
}

nlohmann::json to_json(const FiniteSymmetryReport& report) {
  return {{"max_deviation", report.max_deviation},
          {"tolerance", report.tolerance},
          {"pass", report.pass},
          {"flagged", report.flagged},
          {"certificate", report.certificate}};
}

nlohmann::json to_json(const FlowDerivativeReport& report, bool include_points) {
  nlohmann::json j{{"sup_norm", report.sup_norm},
                   {"max_mismatch", report.max_mismatch},
                   {"evaluated", report.grid.size()},
                   {"flagged", report.flagged}};
  if (include_points) {
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t i = 0; i < report.grid.size(); ++i)
      points.push_back({{"x", vec_json(report.grid[i].first)},
                        {"z", vec_json(report.grid[i].second)},
                        {"derivative", vec_json(report.derivatives[i])}});
    j["points"] = std::move(points);
  }
  return j;
}

nlohmann::json to_json(const FitSymmetryResult& result) {
  nlohmann::json nulls = nlohmann::json::array();
  for (const Vec& d : result.null_directions) nulls.push_back(vec_json(d));
  return {{"singular_values", vec_json(result.singular_values)},
          {"null_directions", std::move(nulls)},
          {"best_direction", vec_json(result.best_direction)},
          {"best_residual", result.best_residual},
          {"rank", result.rank},
          {"rank_tolerance", result.rank_tolerance},
          {"equations", result.equations},
          {"flagged", result.flagged}};
}

}  // namespace liesde
