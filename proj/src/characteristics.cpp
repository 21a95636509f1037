#include "liesde/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace liesde {

namespace {

std::vector<double> linspace(double a, double b, int points) {
  std::vector<double> out(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    out[static_cast<std::size_t>(i)] = a + (b - a) * static_cast<double>(i) / (points - 1);
  out.back() = b;
  return out;
}

void pad_range(double& lo, double& hi) {
  if (lo > hi) {  // no data
    lo = -0.5;
    hi = 0.5;
    return;
  }
  const double range = hi - lo;
  if (range > 0) {
    lo -= 0.05 * range;
    hi += 0.05 * range;
  } else {
    lo -= 0.5;
    hi += 0.5;
  }
}

int time_bin_of(const std::vector<double>& edges, double t) {
  const int bins = static_cast<int>(edges.size()) - 1;
  const double t0 = edges.front(), t1 = edges.back();
  int bin = static_cast<int>(std::floor((t - t0) / (t1 - t0) * bins));
  return std::clamp(bin, 0, bins - 1);
}

// Index k of the interval (times[k], times[k+1]] containing t, clamped to
// the grid. A cumulative increment recorded at time t belongs to this step.
std::size_t step_of(const std::vector<double>& times, double t) {
  const double tol = 1e-12 * std::max(1.0, std::abs(t));
  auto it = std::lower_bound(times.begin(), times.end(), t - tol);
  std::size_t j = static_cast<std::size_t>(it - times.begin());
  j = std::clamp<std::size_t>(j, 1, times.size() - 1);
  return j - 1;
}

// Builds the binned jump summary from (time, log-coordinate) records, each
// carrying `weight` jumps worth of mass.
JumpHistogram bin_jumps(const std::vector<std::pair<double, Vec>>& records, int noise_dim,
                        std::vector<double> time_edges, int axis_bins, double weight) {
  JumpHistogram hist;
  hist.time_edges = std::move(time_edges);
  const int time_bins = static_cast<int>(hist.time_edges.size()) - 1;
  Vec lo = Vec::Constant(noise_dim, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const auto& [t, l] : records) {
    lo = lo.cwiseMin(l);
    hi = hi.cwiseMax(l);
  }
  hist.marginals.resize(static_cast<std::size_t>(time_bins));
  for (int tb = 0; tb < time_bins; ++tb) {
    for (int axis = 0; axis < noise_dim; ++axis) {
      double a = lo[axis], b = hi[axis];
      pad_range(a, b);
      hist.marginals[static_cast<std::size_t>(tb)].push_back(make_histogram(a, b, axis_bins));
    }
  }
  for (const auto& [t, l] : records) {
    const int tb = time_bin_of(hist.time_edges, t);
    for (int axis = 0; axis < noise_dim; ++axis)
      hist.marginals[static_cast<std::size_t>(tb)][static_cast<std::size_t>(axis)].add(l[axis],
                                                                                       weight);
    hist.total_mass += weight;
  }
  return hist;
}

// Sample variance helpers: turn sums and sums of squares across paths into
// standard errors of the mean.
Vec se_of(const Vec& sum, const Vec& sq, double n) {
  const Vec mean = sum / n;
  const Vec var = ((sq / n - mean.cwiseProduct(mean)) * (n / (n - 1.0))).cwiseMax(0.0);
  return (var / n).cwiseSqrt();
}

Mat se_of(const Mat& sum, const Mat& sq, double n) {
  const Mat mean = sum / n;
  const Mat var = ((sq / n - mean.cwiseProduct(mean)) * (n / (n - 1.0))).cwiseMax(0.0);
  return (var / n).cwiseSqrt();
}

// Monte Carlo drift correction intensity * E[h(push(J)) - U h(J)].
struct Correction {
  Vec value;
  Vec se;
};

Correction drift_correction(const LevyTriplet& triplet,
                            const std::function<Vec(const Vec&)>& push, const Mat& u,
                            int samples, Rng& rng) {
  const LieGroupChart& chart = *triplet.chart;
  Vec sum = Vec::Zero(chart.dim), sq = Vec::Zero(chart.dim);
  for (int i = 0; i < samples; ++i) {
    const Vec j = triplet.jump_sampler(rng);
    const Vec term = chart.hunt_vec(push(j)) - u * chart.hunt_vec(j);
    sum += term;
    sq += term.cwiseProduct(term);
  }
  const double n = static_cast<double>(samples);
  Correction c;
  const Vec mean = sum / n;
  c.value = triplet.jump_intensity * mean;
  const Vec var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
  c.se = triplet.jump_intensity * (var / n).cwiseSqrt();
  return c;
}

// Projections used by the jump-law comparison: coordinate axes, two mixed
// diagonals, and the log-coordinate norm appended by the caller.
std::vector<Vec> law_projections(int dim) {
  std::vector<Vec> dirs;
  for (int i = 0; i < dim; ++i) dirs.push_back(Vec::Unit(dim, i));
  if (dim > 1) {
    Vec d1 = Vec::Ones(dim) / std::sqrt(static_cast<double>(dim));
    Vec d2(dim);
    for (int i = 0; i < dim; ++i) d2[i] = (i % 2 == 0) ? 1.0 : -1.0;
    d2 /= d2.norm();
    dirs.push_back(d1);
    dirs.push_back(d2);
  }
  return dirs;
}

struct JumpLawComparison {
  double worst_adjusted_p = 1;
  double intensity_dev_se = 0;
  std::string note;
};

// Compares two weighted samples of jump log coordinates above a common
// truncation radius: KS on every projection plus the norm (Bonferroni), and
// the survivor intensities rate = weight * P(|l| >= radius) in SE units.
JumpLawComparison compare_jump_laws(const std::vector<Vec>& a, const std::vector<Vec>& b,
                                    double weight_a, double weight_b, double radius) {
  JumpLawComparison out;
  std::vector<Vec> ka, kb;
  for (const auto& l : a)
    if (l.norm() >= radius) ka.push_back(l);
  for (const auto& l : b)
    if (l.norm() >= radius) kb.push_back(l);

  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double fa = static_cast<double>(ka.size()) / na;
  const double fb = static_cast<double>(kb.size()) / nb;
  const double rate_a = weight_a * fa, rate_b = weight_b * fb;
  const double se = std::hypot(weight_a * std::sqrt(fa * (1 - fa) / na),
                               weight_b * std::sqrt(fb * (1 - fb) / nb));
  const double diff = std::abs(rate_a - rate_b);
  if (diff > 0 && se == 0) {
    out.intensity_dev_se = std::numeric_limits<double>::infinity();
  } else {
    out.intensity_dev_se = se == 0 ? 0.0 : diff / se;
  }

  if (ka.size() < 50 || kb.size() < 50) {
    out.note = "jump-law shape comparison inconclusive: " + std::to_string(ka.size()) + "/" +
               std::to_string(kb.size()) + " samples above the common radius";
    return out;
  }

  const int dim = static_cast<int>(ka.front().size());
  std::vector<Vec> dirs = law_projections(dim);
  const double family = static_cast<double>(dirs.size()) + 1.0;
  for (const auto& d : dirs) {
    std::vector<double> pa, pb;
    pa.reserve(ka.size());
    pb.reserve(kb.size());
    for (const auto& l : ka) pa.push_back(d.dot(l));
    for (const auto& l : kb) pb.push_back(d.dot(l));
    const double p = ks_test(std::move(pa), std::move(pb)).p_value;
    out.worst_adjusted_p = std::min(out.worst_adjusted_p, std::min(1.0, p * family));
  }
  std::vector<double> pa, pb;
  for (const auto& l : ka) pa.push_back(l.norm());
  for (const auto& l : kb) pb.push_back(l.norm());
  const double p = ks_test(std::move(pa), std::move(pb)).p_value;
  out.worst_adjusted_p = std::min(out.worst_adjusted_p, std::min(1.0, p * family));
  return out;
}

std::vector<Vec> draw_log_jumps(const LevyTriplet& triplet,
                                const std::function<Vec(const Vec&)>& push, int count, Rng& rng,
                                std::size_t& dropped) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vec j = triplet.jump_sampler(rng);
    if (push) j = push(j);
    try {
      out.push_back(log_coords(j, *triplet.chart));
    } catch (const std::runtime_error&) {
      ++dropped;
    }
  }
  return out;
}

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

nlohmann::json mat_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::size_t CharacteristicsEstimate::node_index(double time) const {
  const double tol = 1e-9 * std::max(1.0, std::abs(time));
  for (std::size_t j = 0; j < times.size(); ++j)
    if (std::abs(times[j] - time) <= tol) return j;
  throw std::invalid_argument("characteristics estimate: time " + format_double(time) +
                              " is not a grid node");
}

CharacteristicsEstimate estimate_characteristics(const std::vector<SemimartingalePath>& paths,
                                                 const EstimateOptions& opt) {
  const std::size_t min_paths = std::max<std::size_t>(2, opt.min_paths);
  if (paths.size() < min_paths)
    throw std::invalid_argument("estimate_characteristics: need at least " +
                                std::to_string(min_paths) + " paths, got " +
                                std::to_string(paths.size()));
  const SemimartingalePath& first = paths.front();
  if (!first.chart || first.grid.size() < 2)
    throw std::invalid_argument("estimate_characteristics: paths need a chart and a grid");
  const double t0 = first.grid.front(), t1 = first.grid.back();
  bool shared_grid = true;
  for (const auto& p : paths) {
    if (p.chart != first.chart)
      throw std::invalid_argument("estimate_characteristics: paths must share one chart");
    if (p.grid.size() < 2 || std::abs(p.grid.front() - t0) > 1e-9 * std::max(1.0, std::abs(t0)) ||
        std::abs(p.grid.back() - t1) > 1e-9 * std::max(1.0, std::abs(t1)))
      throw std::invalid_argument("estimate_characteristics: paths must share the time window");
    shared_grid = shared_grid && p.grid.size() == first.grid.size() &&
                  std::equal(p.grid.begin(), p.grid.end(), first.grid.begin());
  }

  const LieGroupChart& chart = *first.chart;
  const int n = chart.dim;
  const double np = static_cast<double>(paths.size());

  CharacteristicsEstimate est;
  est.chart = first.chart;
  if (opt.eval_steps > 0)
    est.times = uniform_grid(t0, t1, static_cast<std::size_t>(opt.eval_steps));
  else
    est.times = shared_grid ? first.grid : uniform_grid(t0, t1, 128);
  est.noise_dim = n;
  est.sample_count = paths.size();
  est.hunt_convention =
      chart.hunt_fn ? "custom" : "cutoff-log radius " + format_double(chart.hunt_radius);
  const std::size_t nodes = est.times.size();

  // Ensemble drift rate, used to center the quadratic accumulation so a
  // deterministic drift does not leak into a_hat.
  Vec rate = Vec::Zero(n);
  for (const auto& p : paths)
    for (const auto& inc : p.cont_increments) rate += inc;
  rate /= np * (t1 - t0);

  std::vector<Vec> b_sum(nodes, Vec::Zero(n)), b_sq(nodes, Vec::Zero(n));
  std::vector<Mat> a_sum(nodes, Mat::Zero(n, n)), a_sq(nodes, Mat::Zero(n, n));
  for (const auto& p : paths) {
    Vec bc = Vec::Zero(n);
    Mat ac = Mat::Zero(n, n);
    std::size_t e = 1;  // eval node waiting for its cumulative value
    auto flush_until = [&](double limit) {
      // record the current cumulative sums at every eval time < limit
      const double tol = std::isfinite(limit) ? 1e-12 * std::max(1.0, std::abs(limit)) : 0.0;
      while (e < nodes && est.times[e] < limit - tol) {
        b_sum[e] += bc;
        b_sq[e] += bc.cwiseProduct(bc);
        a_sum[e] += ac;
        a_sq[e] += ac.cwiseProduct(ac);
        ++e;
      }
    };
    for (std::size_t k = 0; k < p.steps(); ++k) {
      flush_until(p.grid[k + 1]);
      const double dt = p.grid[k + 1] - p.grid[k];
      bc += p.cont_increments[k];
      if (const JumpMark* mark = p.jump_at(k + 1)) bc += chart.hunt_vec(mark->jump.value);
      const Vec centered = p.cont_increments[k] - rate * dt;
      ac += centered * centered.transpose();
    }
    flush_until(std::numeric_limits<double>::infinity());
  }
  est.b_hat.assign(nodes, Vec::Zero(n));
  est.b_se.assign(nodes, Vec::Zero(n));
  est.a_hat.assign(nodes, Mat::Zero(n, n));
  est.a_se.assign(nodes, Mat::Zero(n, n));
  for (std::size_t j = 1; j < nodes; ++j) {
    est.b_hat[j] = b_sum[j] / np;
    est.b_se[j] = se_of(b_sum[j], b_sq[j], np);
    est.a_hat[j] = a_sum[j] / np;
    est.a_se[j] = se_of(a_sum[j], a_sq[j], np);
  }

  // Jump records: reservoir of raw (time, log) pairs plus the binned summary.
  Rng rng(opt.reservoir_seed);
  std::size_t seen = 0;
  std::vector<std::pair<double, Vec>> all_records;
  for (const auto& p : paths) {
    for (const auto& mark : p.jumps) {
      Vec l;
      try {
        l = log_coords(mark.jump.value, chart);
      } catch (const std::runtime_error&) {
        ++est.nu_hat.dropped;
        continue;
      }
      all_records.emplace_back(mark.time, std::move(l));
      ++seen;
      if (est.jump_reservoir.size() < opt.reservoir_cap) {
        est.jump_reservoir.push_back(all_records.back());
      } else {
        const std::size_t slot = static_cast<std::size_t>(rng.uniform01() * seen);
        if (slot < opt.reservoir_cap) est.jump_reservoir[slot] = all_records.back();
      }
    }
  }
  est.reservoir_scale =
      est.jump_reservoir.empty()
          ? 1.0
          : static_cast<double>(seen) / static_cast<double>(est.jump_reservoir.size());
  const std::size_t dropped = est.nu_hat.dropped;
  est.nu_hat = bin_jumps(all_records, n, linspace(first.grid.front(), first.grid.back(),
                                                  opt.time_bins + 1),
                         opt.axis_bins, 1.0);
  est.nu_hat.dropped = dropped;
  return est;
}

TransformedTriplet transformed_characteristics(const LevyTriplet& triplet,
                                               const GaugeAction& action, const Vec& g,
                                               const TripletTransformOptions& opt) {
  triplet.validate();
  if (action.noise != triplet.chart)
    throw std::invalid_argument(
        "transformed_characteristics: the action and the triplet use different noise charts");
  const LieGroupChart& chart = *triplet.chart;
  const int n = chart.dim;
  const Mat u = action.upsilon_of(g);
  const std::vector<Mat> o = action.o_second_of(g);
  Vec o_term = Vec::Zero(n);
  for (int alpha = 0; alpha < n; ++alpha)
    o_term[alpha] = 0.5 * o[static_cast<std::size_t>(alpha)].cwiseProduct(triplet.A0).sum();

  const bool has_jumps = triplet.jump_intensity > 0 && triplet.jump_sampler;
  if (has_jumps && !action.xi)
    throw std::logic_error("transformed_characteristics: the action needs xi to move jumps");

  TransformedTriplet out;
  out.correction = Vec::Zero(n);
  out.correction_se = Vec::Zero(n);
  // For an isometric-log automorphism with the default Hunt functions,
  // h(Xi_g z) = Upsilon_g h(z) holds identically and the correction is zero.
  const bool correction_vanishes =
      !has_jumps || (action.automorphism && action.isometric_log && !chart.hunt_fn);
  if (!correction_vanishes) {
    out.monte_carlo = true;
    Rng rng(opt.seed);
    auto push = [&](const Vec& z) { return action.xi(g, z); };
    const Correction c = drift_correction(triplet, push, u, opt.mc_samples, rng);
    out.correction = c.value;
    out.correction_se = c.se;
  }

  out.triplet.chart = triplet.chart;
  out.triplet.b0 = u * triplet.b0 + o_term + out.correction;
  out.triplet.A0 = u * triplet.A0 * u.transpose();
  out.triplet.jump_intensity = triplet.jump_intensity;
  if (triplet.jump_sampler) {
    auto sampler = triplet.jump_sampler;
    auto xi = action.xi;
    const Vec gc = g;
    out.triplet.jump_sampler = [sampler, xi, gc](Rng& r) { return xi(gc, sampler(r)); };
  }
  return out;
}

CharacteristicsEstimate transformed_characteristics(const CharacteristicsEstimate& est,
                                                    const GaugeAction& action,
                                                    const std::vector<Vec>& g_steps,
                                                    const EstimateOptions& opt) {
  if (!est.chart || est.times.size() < 2)
    throw std::invalid_argument("transformed_characteristics: estimate not initialized");
  if (action.noise != est.chart)
    throw std::invalid_argument(
        "transformed_characteristics: the action and the estimate use different noise charts");
  const std::size_t steps = est.times.size() - 1;
  if (g_steps.size() != steps)
    throw std::invalid_argument("transformed_characteristics: one control value per step, got " +
                                std::to_string(g_steps.size()) + " for " + std::to_string(steps) +
                                " steps");
  const LieGroupChart& chart = *est.chart;
  const int n = est.noise_dim;
  if (!est.jump_reservoir.empty() && !action.xi)
    throw std::logic_error("transformed_characteristics: the action needs xi to move jumps");

  std::vector<Mat> u(steps);
  for (std::size_t k = 0; k < steps; ++k) u[k] = action.upsilon_of(g_steps[k]);

  // Push the reservoir and collect the per-step replacement of the jump Hunt
  // terms inside b_hat: each kept record stands for reservoir_scale jumps and
  // each path contributes 1/sample_count to the ensemble mean.
  const double per_record =
      est.reservoir_scale / static_cast<double>(std::max<std::size_t>(1, est.sample_count));
  std::vector<Vec> jump_shift(steps, Vec::Zero(n));
  std::vector<std::pair<double, Vec>> pushed;
  pushed.reserve(est.jump_reservoir.size());
  std::size_t dropped = est.nu_hat.dropped;
  for (const auto& [t, l] : est.jump_reservoir) {
    const std::size_t k = step_of(est.times, t);
    const Vec& g = g_steps[k];
    const Vec element = exp_flow(l, chart.identity, chart);
    const Vec moved = action.xi(g, element);
    jump_shift[k] += per_record * (chart.hunt_vec(moved) - u[k] * chart.hunt_vec(element));
    try {
      pushed.emplace_back(t, log_coords(moved, chart));
    } catch (const std::runtime_error&) {
      ++dropped;
    }
  }

  CharacteristicsEstimate out;
  out.chart = est.chart;
  out.times = est.times;
  out.noise_dim = n;
  out.sample_count = est.sample_count;
  out.hunt_convention = est.hunt_convention;
  out.reservoir_scale = est.reservoir_scale;
  out.jump_reservoir = std::move(pushed);
  out.b_hat.assign(steps + 1, Vec::Zero(n));
  out.b_se.assign(steps + 1, Vec::Zero(n));
  out.a_hat.assign(steps + 1, Mat::Zero(n, n));
  out.a_se.assign(steps + 1, Mat::Zero(n, n));

  Vec b_var = Vec::Zero(n);
  Mat a_var = Mat::Zero(n, n);
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec db = est.b_hat[k + 1] - est.b_hat[k];
    const Mat da = est.a_hat[k + 1] - est.a_hat[k];
    const std::vector<Mat> o = action.o_second_of(g_steps[k]);
    Vec o_term = Vec::Zero(n);
    for (int alpha = 0; alpha < n; ++alpha)
      o_term[alpha] = 0.5 * o[static_cast<std::size_t>(alpha)].cwiseProduct(da).sum();
    out.b_hat[k + 1] = out.b_hat[k] + u[k] * db + o_term + jump_shift[k];
    out.a_hat[k + 1] = out.a_hat[k] + u[k] * da * u[k].transpose();

    const Mat au = u[k].cwiseAbs();
    const Vec db_se =
        (est.b_se[k + 1].cwiseProduct(est.b_se[k + 1]) - est.b_se[k].cwiseProduct(est.b_se[k]))
            .cwiseMax(0.0)
            .cwiseSqrt();
    const Vec tb = au * db_se;
    b_var += tb.cwiseProduct(tb);
    out.b_se[k + 1] = b_var.cwiseSqrt();
    const Mat da_se =
        (est.a_se[k + 1].cwiseProduct(est.a_se[k + 1]) - est.a_se[k].cwiseProduct(est.a_se[k]))
            .cwiseMax(0.0)
            .cwiseSqrt();
    const Mat ta = au * da_se * au.transpose();
    a_var += ta.cwiseProduct(ta);
    out.a_se[k + 1] = a_var.cwiseSqrt();
  }

  out.nu_hat = bin_jumps(out.jump_reservoir, n, est.nu_hat.time_edges, opt.axis_bins,
                         est.reservoir_scale);
  out.nu_hat.dropped = dropped;
  return out;
}

CharacteristicsEstimate transformed_characteristics(const CharacteristicsEstimate& est,
                                                    const GaugeAction& action, const Vec& g,
                                                    const EstimateOptions& opt) {
  if (est.times.size() < 2)
    throw std::invalid_argument("transformed_characteristics: estimate not initialized");
  return transformed_characteristics(est, action, std::vector<Vec>(est.times.size() - 1, g), opt);
}

CharacteristicsEstimate time_changed_characteristics(const CharacteristicsEstimate& est,
                                                     const std::function<double(double)>& beta) {
  if (!beta) throw std::invalid_argument("time_changed_characteristics: beta not set");
  CharacteristicsEstimate out = est;
  for (auto& t : out.times) t = beta(t);
  for (std::size_t j = 1; j < out.times.size(); ++j)
    if (!(out.times[j] > out.times[j - 1]))
      throw std::invalid_argument("time_changed_characteristics: beta must be strictly increasing");
  for (auto& e : out.nu_hat.time_edges) e = beta(e);
  for (auto& [t, l] : out.jump_reservoir) t = beta(t);
  return out;
}

InvarianceReport levy_gauge_check(const LevyTriplet& triplet, const GaugeAction& action,
                                  const std::vector<Vec>& gs, const InvarianceOptions& opt) {
  triplet.validate();
  if (action.noise != triplet.chart)
    throw std::invalid_argument(
        "levy_gauge_check: the action and the triplet use different noise charts");
  const bool simplified_ok =
      action.automorphism && action.isometric_log && !triplet.chart->hunt_fn;
  if (!simplified_ok && !opt.full_check)
    throw std::invalid_argument(
        "levy_gauge_check: the simplified conditions need an automorphism action that is "
        "isometric in log coordinates with the default Hunt functions; set full_check to run "
        "the correction-integral form");
  const bool full = opt.full_check;
  const bool has_jumps = triplet.jump_intensity > 0 && triplet.jump_sampler;

  InvarianceReport report;
  report.mode = full ? "full" : "simplified";
  report.pass = true;
  for (std::size_t gi = 0; gi < gs.size(); ++gi) {
    const Vec& g = gs[gi];
    const Mat u = action.upsilon_of(g);
    InvarianceSample s;
    s.parameter = g;
    s.diffusion_residual =
        (triplet.A0 - u * triplet.A0 * u.transpose()).lpNorm<Eigen::Infinity>();

    Vec rhs = u * triplet.b0;
    s.drift_gate = opt.drift_tol;
    if (full) {
      const std::vector<Mat> o = action.o_second_of(g);
      for (int alpha = 0; alpha < triplet.chart->dim; ++alpha)
        rhs[alpha] += 0.5 * o[static_cast<std::size_t>(alpha)].cwiseProduct(triplet.A0).sum();
      if (has_jumps) {
        Rng rng(opt.seed, gi);
        auto push = [&](const Vec& z) { return action.xi(g, z); };
        const Correction c = drift_correction(triplet, push, u, opt.mc_samples, rng);
        rhs += c.value;
        s.drift_gate += opt.se_multiple * c.se.maxCoeff();
      }
    }
    s.drift_residual = (triplet.b0 - rhs).lpNorm<Eigen::Infinity>();

    if (has_jumps) {
      Rng rng_a(opt.seed, 2 * gi + 1000);
      Rng rng_b(opt.seed, 2 * gi + 1001);
      std::size_t dropped = 0;
      const std::vector<Vec> la = draw_log_jumps(triplet, nullptr, opt.mc_samples, rng_a, dropped);
      auto push = [&](const Vec& z) { return action.xi(g, z); };
      const std::vector<Vec> lb = draw_log_jumps(triplet, push, opt.mc_samples, rng_b, dropped);
      const JumpLawComparison cmp =
          compare_jump_laws(la, lb, triplet.jump_intensity, triplet.jump_intensity, 0.0);
      s.nu_worst_p = cmp.worst_adjusted_p;
      s.intensity_deviation_se = cmp.intensity_dev_se;
      s.note = cmp.note;
      if (dropped > 0)
        s.note += (s.note.empty() ? "" : "; ") + std::to_string(dropped) +
                  " jump samples without log coordinates";
    }

    s.pass = s.drift_residual <= s.drift_gate && s.diffusion_residual <= opt.diffusion_tol &&
             s.nu_worst_p >= opt.p_floor && s.intensity_deviation_se < opt.se_multiple;
    report.pass = report.pass && s.pass;
    report.samples.push_back(std::move(s));
  }
  return report;
}

InvarianceReport levy_time_check(const LevyTriplet& triplet, const TimeAction& action,
                                 const std::vector<double>& rs, const InvarianceOptions& opt) {
  triplet.validate();
  if (action.noise != triplet.chart)
    throw std::invalid_argument(
        "levy_time_check: the action and the triplet use different noise charts");
  const bool has_jumps = triplet.jump_intensity > 0 && triplet.jump_sampler;
  const LieGroupChart& chart = *triplet.chart;

  InvarianceReport report;
  report.mode = "full";
  report.pass = true;
  for (std::size_t ri = 0; ri < rs.size(); ++ri) {
    const double r = rs[ri];
    if (!(r > 0)) throw std::invalid_argument("levy_time_check: r must be positive");
    const Mat gamma = action.gamma_of(r);
    InvarianceSample s;
    s.parameter = Vec::Constant(1, r);
    s.diffusion_residual =
        (triplet.A0 - gamma * triplet.A0 * gamma.transpose() / r).lpNorm<Eigen::Infinity>();

    Vec rhs = gamma * triplet.b0;
    const std::vector<Mat> q = action.q_second_of(r);
    for (int alpha = 0; alpha < chart.dim; ++alpha)
      rhs[alpha] += q[static_cast<std::size_t>(alpha)].cwiseProduct(triplet.A0).sum();
    s.drift_gate = opt.drift_tol;
    if (has_jumps) {
      if (!action.gamma) throw std::logic_error("levy_time_check: the action needs gamma");
      Rng rng(opt.seed, ri);
      auto push = [&](const Vec& z) { return action.gamma(r, z); };
      const Correction c = drift_correction(triplet, push, gamma, opt.mc_samples, rng);
      rhs += c.value;
      s.drift_gate += opt.se_multiple * c.se.maxCoeff() / r;
    }
    rhs /= r;
    s.drift_residual = (triplet.b0 - rhs).lpNorm<Eigen::Infinity>();

    if (has_jumps) {
      Rng rng_a(opt.seed, 2 * ri + 5000);
      Rng rng_b(opt.seed, 2 * ri + 5001);
      std::size_t dropped = 0;
      const std::vector<Vec> la = draw_log_jumps(triplet, nullptr, opt.mc_samples, rng_a, dropped);
      auto push = [&](const Vec& z) { return action.gamma(r, z); };
      const std::vector<Vec> lb = draw_log_jumps(triplet, push, opt.mc_samples, rng_b, dropped);
      double min_a = std::numeric_limits<double>::infinity(), min_b = min_a;
      for (const auto& l : la) min_a = std::min(min_a, l.norm());
      for (const auto& l : lb) min_b = std::min(min_b, l.norm());
      const double radius = std::max(min_a, min_b) * (1 + 1e-9);
      const JumpLawComparison cmp =
          compare_jump_laws(la, lb, triplet.jump_intensity, triplet.jump_intensity / r, radius);
      s.nu_worst_p = cmp.worst_adjusted_p;
      s.intensity_deviation_se = cmp.intensity_dev_se;
      s.note = cmp.note;
      if (dropped > 0)
        s.note += (s.note.empty() ? "" : "; ") + std::to_string(dropped) +
                  " jump samples without log coordinates";
    }

    s.pass = s.drift_residual <= s.drift_gate && s.diffusion_residual <= opt.diffusion_tol &&
             s.nu_worst_p >= opt.p_floor && s.intensity_deviation_se < opt.se_multiple;
    report.pass = report.pass && s.pass;
    report.samples.push_back(std::move(s));
  }
  return report;
}

std::string InvarianceReport::summary() const {
  std::ostringstream os;
  os << "invariance check (" << mode << "): " << (pass ? "PASS" : "FAIL") << " over "
     << samples.size() << " parameter values";
  double worst_drift = 0, worst_diff = 0, worst_p = 1, worst_int = 0;
  for (const auto& s : samples) {
    worst_drift = std::max(worst_drift, s.drift_residual);
    worst_diff = std::max(worst_diff, s.diffusion_residual);
    worst_p = std::min(worst_p, s.nu_worst_p);
    worst_int = std::max(worst_int, s.intensity_deviation_se);
  }
  os << " (worst drift residual " << format_double(worst_drift) << ", worst diffusion residual "
     << format_double(worst_diff) << ", worst jump-law p " << format_double(worst_p)
     << ", worst intensity deviation " << format_double(worst_int) << " SE)";
  return os.str();
}

nlohmann::json to_json(const JumpHistogram& hist) {
  nlohmann::json j;
  j["time_edges"] = hist.time_edges;
  j["total_mass"] = hist.total_mass;
  j["dropped"] = hist.dropped;
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& per_axis : hist.marginals) {
    nlohmann::json axes = nlohmann::json::array();
    for (const auto& h : per_axis)
      axes.push_back({{"lower", h.lower}, {"upper", h.upper}, {"counts", h.counts}});
    bins.push_back(axes);
  }
  j["marginals"] = bins;
  return j;
}

nlohmann::json to_json(const CharacteristicsEstimate& est) {
  nlohmann::json j;
  j["times"] = est.times;
  j["sample_count"] = est.sample_count;
  j["noise_dim"] = est.noise_dim;
  j["hunt_convention"] = est.hunt_convention;
  j["reservoir_scale"] = est.reservoir_scale;
  nlohmann::json b = nlohmann::json::array(), bs = nlohmann::json::array();
  nlohmann::json a = nlohmann::json::array(), as = nlohmann::json::array();
  for (std::size_t k = 0; k < est.times.size(); ++k) {
    b.push_back(vec_json(est.b_hat[k]));
    bs.push_back(vec_json(est.b_se[k]));
    a.push_back(mat_json(est.a_hat[k]));
    as.push_back(mat_json(est.a_se[k]));
  }
  j["b_hat"] = b;
  j["b_se"] = bs;
  j["a_hat"] = a;
  j["a_se"] = as;
  j["nu_hat"] = to_json(est.nu_hat);
  return j;
}

nlohmann::json to_json(const InvarianceReport& report) {
  nlohmann::json j;
  j["mode"] = report.mode;
  j["pass"] = report.pass;
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : report.samples) {
    samples.push_back({{"parameter", vec_json(s.parameter)},
                       {"drift_residual", s.drift_residual},
                       {"drift_gate", s.drift_gate},
                       {"diffusion_residual", s.diffusion_residual},
                       {"nu_worst_p", s.nu_worst_p},
                       {"intensity_deviation_se", s.intensity_deviation_se},
                       {"pass", s.pass},
                       {"note", s.note}});
  }
  j["samples"] = samples;
  return j;
}

void write_csv(const CharacteristicsEstimate& est, std::ostream& os) {
  const int n = est.noise_dim;
  os << "time";
  for (int i = 0; i < n; ++i) os << ",b" << i;
  for (int i = 0; i < n; ++i) os << ",b_se" << i;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) os << ",a" << i << k;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) os << ",a_se" << i << k;
  os << "\n";
  for (std::size_t j = 0; j < est.times.size(); ++j) {
    os << format_double(est.times[j]);
    for (int i = 0; i < n; ++i) os << "," << format_double(est.b_hat[j][i]);
    for (int i = 0; i < n; ++i) os << "," << format_double(est.b_se[j][i]);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) os << "," << format_double(est.a_hat[j](i, k));
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) os << "," << format_double(est.a_se[j](i, k));
    os << "\n";
  }
}

}  // namespace liesde
