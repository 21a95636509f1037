#include "liesde/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

namespace liesde {

namespace {

std::size_t locate_node(const std::vector<double>& grid, double time) {
  const double tol = 1e-9 * std::max(1.0, std::abs(time));
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (std::abs(grid[j] - time) <= tol) return j;
  }
  throw std::invalid_argument("law test: time " + format_double(time) +
                              " is not a grid node of every path");
}

// Everything the law test needs, extracted from either path flavour.
struct LawData {
  std::size_t n_paths = 0;
  int comps = 0;
  // at_times[time_idx][path][comp]
  std::vector<std::vector<Vec>> at_times;
  std::vector<double> jump_counts;  // per path, as doubles for binning
  std::vector<Vec> jump_coords;     // pooled jump coordinates
  int jump_axes = 0;
  std::size_t dropped_paths = 0;
  std::size_t coord_failures = 0;
};

LawData extract(const std::vector<SemimartingalePath>& paths, const std::vector<double>& times) {
  LawData d;
  if (paths.empty()) throw std::invalid_argument("law test: empty ensemble");
  d.comps = static_cast<int>(paths.front().values.front().size());
  d.at_times.resize(times.size());
  for (const auto& p : paths) {
    if (static_cast<int>(p.values.front().size()) != d.comps)
      throw std::invalid_argument("law test: mixed dimensions within an ensemble");
    for (std::size_t ti = 0; ti < times.size(); ++ti)
      d.at_times[ti].push_back(p.values[locate_node(p.grid, times[ti])]);
    d.jump_counts.push_back(static_cast<double>(p.jumps.size()));
    for (const auto& mark : p.jumps) {
      try {
        d.jump_coords.push_back(log_coords(mark.jump.value, *p.chart));
      } catch (const std::runtime_error&) {
        ++d.coord_failures;
      }
    }
    ++d.n_paths;
  }
  d.jump_axes = d.jump_coords.empty() ? d.comps : static_cast<int>(d.jump_coords.front().size());
  return d;
}

LawData extract(const std::vector<SolutionPath>& paths, const std::vector<double>& times) {
  LawData d;
  if (paths.empty()) throw std::invalid_argument("law test: empty ensemble");
  std::size_t usable = 0;
  for (const auto& p : paths)
    if (!p.exploded) ++usable;
  if (usable == 0) throw std::invalid_argument("law test: every path exploded");
  for (const auto& p : paths) {
    if (p.exploded) {
      ++d.dropped_paths;
      continue;
    }
    if (d.comps == 0) {
      d.comps = static_cast<int>(p.states.front().size());
      d.at_times.resize(times.size());
    }
    for (std::size_t ti = 0; ti < times.size(); ++ti)
      d.at_times[ti].push_back(p.states[locate_node(p.grid, times[ti])]);
    d.jump_counts.push_back(static_cast<double>(p.jumps.size()));
    for (const auto& [index, pre] : p.jumps) d.jump_coords.push_back(p.states[index] - pre);
    ++d.n_paths;
  }
  d.jump_axes = d.jump_coords.empty() ? d.comps : static_cast<int>(d.jump_coords.front().size());
  return d;
}

std::vector<double> component_slice(const std::vector<Vec>& values, int comp) {
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& v : values) out.push_back(v[comp]);
  return out;
}

LawTestReport run_law_test(const LawData& a, const LawData& b, const LawTestConfig& config) {
  if (config.times.empty()) throw std::invalid_argument("law test: no comparison times given");
  if (a.comps != b.comps)
    throw std::invalid_argument("law test: ensembles have different dimensions");

  LawTestReport report;
  if (a.n_paths < config.min_paths || b.n_paths < config.min_paths) {
    report.warnings.push_back("underpowered: ensembles have " + std::to_string(a.n_paths) +
                              " and " + std::to_string(b.n_paths) + " paths (< " +
                              std::to_string(config.min_paths) + ")");
  }
  if (a.dropped_paths + b.dropped_paths > 0) {
    report.warnings.push_back("dropped " + std::to_string(a.dropped_paths + b.dropped_paths) +
                              " exploded paths");
  }
  if (a.coord_failures + b.coord_failures > 0) {
    report.warnings.push_back("skipped " + std::to_string(a.coord_failures + b.coord_failures) +
                              " jumps without log coordinates");
  }

  for (std::size_t ti = 0; ti < config.times.size(); ++ti) {
    for (int c = 0; c < a.comps; ++c) {
      KsResult ks = ks_test(component_slice(a.at_times[ti], c), component_slice(b.at_times[ti], c));
      report.marginals.push_back({config.times[ti], c, ks.statistic, ks.p_value, 1.0});
    }
    if (config.check_covariance) {
      MeanCov ma = mean_cov(a.at_times[ti]);
      MeanCov mb = mean_cov(b.at_times[ti]);
      double worst = 0;
      for (int i = 0; i < a.comps; ++i) {
        for (int j = 0; j < a.comps; ++j) {
          double se = std::hypot(ma.cov_se(i, j), mb.cov_se(i, j));
          if (se == 0) continue;
          worst = std::max(worst, std::abs(ma.cov(i, j) - mb.cov(i, j)) / se);
        }
      }
      report.covariances.push_back({config.times[ti], worst});
      report.max_cov_deviation_se = std::max(report.max_cov_deviation_se, worst);
    }
  }

  const bool any_jumps = !a.jump_coords.empty() || !b.jump_coords.empty();
  if (config.check_jumps && any_jumps) {
    report.jumps_compared = true;
    double max_count = 0;
    for (double c : a.jump_counts) max_count = std::max(max_count, c);
    for (double c : b.jump_counts) max_count = std::max(max_count, c);
    int count_bins = static_cast<int>(std::min(max_count + 1, 64.0));
    Histogram ha = make_histogram(-0.5, max_count + 0.5, count_bins);
    Histogram hb = ha;
    for (double c : a.jump_counts) ha.add(c);
    for (double c : b.jump_counts) hb.add(c);
    report.jump_count_p = chi_square_two_binned(ha.counts, hb.counts).p_value;

    const int axes = a.jump_coords.empty() ? b.jump_axes : a.jump_axes;
    for (int axis = 0; axis < axes; ++axis) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& v : a.jump_coords) lo = std::min(lo, v[axis]), hi = std::max(hi, v[axis]);
      for (const auto& v : b.jump_coords) lo = std::min(lo, v[axis]), hi = std::max(hi, v[axis]);
      if (!(lo < hi)) {
        lo -= 0.5;
        hi += 0.5;
      }
      Histogram sa = make_histogram(lo, hi, config.jump_bins);
      Histogram sb = sa;
      for (const auto& v : a.jump_coords) sa.add(v[axis]);
      for (const auto& v : b.jump_coords) sb.add(v[axis]);
      report.jump_size_p.push_back(chi_square_two_binned(sa.counts, sb.counts).p_value);
    }
  }

  report.tests = report.marginals.size() +
                 (report.jumps_compared ? 1 + report.jump_size_p.size() : 0);
  const double family = static_cast<double>(report.tests);
  auto adjust = [family](double p) { return std::min(1.0, p * family); };
  report.worst_p_adjusted = 1.0;
  for (auto& m : report.marginals) {
    m.p_adjusted = adjust(m.p_value);
    report.worst_p_adjusted = std::min(report.worst_p_adjusted, m.p_adjusted);
  }
  if (report.jumps_compared) {
    report.jump_count_p_adjusted = adjust(report.jump_count_p);
    report.worst_p_adjusted = std::min(report.worst_p_adjusted, report.jump_count_p_adjusted);
    for (double p : report.jump_size_p) {
      report.jump_size_p_adjusted.push_back(adjust(p));
      report.worst_p_adjusted = std::min(report.worst_p_adjusted, report.jump_size_p_adjusted.back());
    }
  }
  report.pass = report.worst_p_adjusted >= config.p_floor &&
                report.max_cov_deviation_se < config.se_multiple;
  return report;
}

}  // namespace

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_p_value(double d, std::size_t na, std::size_t nb) {
  const double ne = static_cast<double>(na) * static_cast<double>(nb) /
                    static_cast<double>(na + nb);
  const double sq = std::sqrt(ne);
  const double lambda = (sq + 0.12 + 0.11 / sq) * d;
  if (lambda <= 0) return 1.0;
  double sum = 0, sign = 1;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-12 * std::max(1e-300, sum)) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> a, std::vector<double> b) {
  KsResult r;
  r.na = a.size();
  r.nb = b.size();
  r.statistic = ks_statistic(std::move(a), std::move(b));
  r.p_value = ks_p_value(r.statistic, r.na, r.nb);
  return r;
}

double chi_square_upper_p(double statistic, double dof) {
  if (dof <= 0) return 1.0;
  if (statistic <= 0) return 1.0;
  return boost::math::gamma_q(dof / 2.0, statistic / 2.0);
}

void Histogram::add(double x, double weight) {
  if (counts.empty()) throw std::logic_error("Histogram::add on empty histogram");
  const double width = (upper - lower) / static_cast<double>(counts.size());
  int bin = static_cast<int>(std::floor((x - lower) / width));
  bin = std::clamp(bin, 0, static_cast<int>(counts.size()) - 1);
  counts[static_cast<std::size_t>(bin)] += weight;
}

double Histogram::total() const {
  double t = 0;
  for (double c : counts) t += c;
  return t;
}

double Histogram::center(int bin) const {
  const double width = (upper - lower) / static_cast<double>(counts.size());
  return lower + (bin + 0.5) * width;
}

Histogram make_histogram(double lower, double upper, int bins) {
  if (!(lower < upper) || bins <= 0) throw std::invalid_argument("make_histogram: bad range");
  Histogram h;
  h.lower = lower;
  h.upper = upper;
  h.counts.assign(static_cast<std::size_t>(bins), 0.0);
  return h;
}

ChiSquareResult chi_square_two_binned(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("chi_square_two_binned: size mismatch");
  double na = 0, nb = 0;
  for (double x : a) na += x;
  for (double x : b) nb += x;
  ChiSquareResult r;
  if (na <= 0 || nb <= 0) return r;  // nothing to compare
  const double ra = std::sqrt(nb / na), rb = std::sqrt(na / nb);
  int used = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = a[i] + b[i];
    if (denom <= 0) continue;
    const double diff = ra * a[i] - rb * b[i];
    r.statistic += diff * diff / denom;
    ++used;
  }
  r.dof = std::max(0, used - 1);
  r.p_value = chi_square_upper_p(r.statistic, r.dof);
  return r;
}

MeanCov mean_cov(const std::vector<Vec>& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_cov: empty sample");
  const int dim = static_cast<int>(samples.front().size());
  const double n = static_cast<double>(samples.size());
  MeanCov mc;
  mc.n = samples.size();
  mc.mean = Vec::Zero(dim);
  for (const auto& s : samples) mc.mean += s;
  mc.mean /= n;
  mc.cov = Mat::Zero(dim, dim);
  Mat second = Mat::Zero(dim, dim);  // mean of squared centered products
  for (const auto& s : samples) {
    const Vec c = s - mc.mean;
    const Mat p = c * c.transpose();
    mc.cov += p;
    second += p.cwiseProduct(p);
  }
  second /= n;
  const Mat prod_mean = mc.cov / n;
  mc.cov /= std::max(1.0, n - 1);
  mc.mean_se = (mc.cov.diagonal() / n).cwiseMax(0.0).cwiseSqrt();
  mc.cov_se = ((second - prod_mean.cwiseProduct(prod_mean)) / n).cwiseMax(0.0).cwiseSqrt();
  return mc;
}

LawTestReport law_equality_test(const std::vector<SemimartingalePath>& a,
                                const std::vector<SemimartingalePath>& b,
                                const LawTestConfig& config) {
  return run_law_test(extract(a, config.times), extract(b, config.times), config);
}

LawTestReport law_equality_test(const std::vector<SolutionPath>& a,
                                const std::vector<SolutionPath>& b,
                                const LawTestConfig& config) {
  return run_law_test(extract(a, config.times), extract(b, config.times), config);
}

std::string LawTestReport::summary() const {
  std::ostringstream os;
  os << "law test: " << (pass ? "PASS" : "FAIL") << " (worst adjusted p="
     << format_double(worst_p_adjusted) << ", max cov deviation="
     << format_double(max_cov_deviation_se) << " SE, family size=" << tests << ")";
  for (const auto& w : warnings) os << " [" << w << "]";
  return os.str();
}

nlohmann::json to_json(const LawTestReport& report) {
  nlohmann::json j;
  j["pass"] = report.pass;
  j["tests"] = report.tests;
  j["worst_p_adjusted"] = report.worst_p_adjusted;
  j["max_cov_deviation_se"] = report.max_cov_deviation_se;
  j["warnings"] = report.warnings;
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : report.marginals) {
    ms.push_back({{"time", m.time},
                  {"component", m.component},
                  {"ks", m.statistic},
                  {"p", m.p_value},
                  {"p_adjusted", m.p_adjusted}});
  }
  j["marginals"] = ms;
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : report.covariances)
    cs.push_back({{"time", c.time}, {"max_deviation_se", c.max_deviation_se}});
  j["covariances"] = cs;
  j["jumps_compared"] = report.jumps_compared;
  if (report.jumps_compared) {
    j["jump_count_p"] = report.jump_count_p;
    j["jump_count_p_adjusted"] = report.jump_count_p_adjusted;
    j["jump_size_p"] = report.jump_size_p;
    j["jump_size_p_adjusted"] = report.jump_size_p_adjusted;
  }
  return j;
}

}  // namespace liesde
