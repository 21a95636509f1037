#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "liesde/linalg.hpp"
#include "liesde/path.hpp"
#include "liesde/sde.hpp"

#include "json.hpp"

namespace liesde {

// ---------------------------------------------------------------------------
// Scalar two-sample machinery.
// ---------------------------------------------------------------------------

// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|, computed
// exactly by merging the sorted samples.
double ks_statistic(std::vector<double> a, std::vector<double> b);

// Asymptotic two-sample KS p-value
//   p = Q((sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * d),   ne = na*nb/(na+nb),
//   Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2),
// clamped to [0, 1].
double ks_p_value(double d, std::size_t na, std::size_t nb);

struct KsResult {
  double statistic = 0;
  double p_value = 1;
  std::size_t na = 0, nb = 0;
};

KsResult ks_test(std::vector<double> a, std::vector<double> b);

// Upper tail P[Chi2(dof) >= statistic]. dof may be fractional.
double chi_square_upper_p(double statistic, double dof);

// Uniform-bin histogram on [lower, upper]. Samples outside the range are
// clamped into the boundary bins so the total mass equals the number of adds
// (weighted adds accumulate their weight instead).
struct Histogram {
  double lower = 0;
  double upper = 1;
  std::vector<double> counts;

  void add(double x, double weight = 1.0);
  double total() const;
  int bins() const { return static_cast<int>(counts.size()); }
  double center(int bin) const;
};

Histogram make_histogram(double lower, double upper, int bins);

// Chi-square equality statistic for two binned datasets with possibly
// different totals Na, Nb:
//   chi2 = sum_i (sqrt(Nb/Na) a_i - sqrt(Na/Nb) b_i)^2 / (a_i + b_i)
// over bins with a_i + b_i > 0, dof = (#used bins) - 1.
struct ChiSquareResult {
  double statistic = 0;
  double dof = 0;
  double p_value = 1;
};

ChiSquareResult chi_square_two_binned(const std::vector<double>& a, const std::vector<double>& b);

// Sample mean and covariance with standard errors. cov uses the n-1
// normalization; cov_se(i,j) is the standard error of the (i,j) entry,
// estimated from the empirical spread of the centered products.
struct MeanCov {
  Vec mean;
  Mat cov;
  Vec mean_se;
  Mat cov_se;
  std::size_t n = 0;
};

MeanCov mean_cov(const std::vector<Vec>& samples);

// ---------------------------------------------------------------------------
// Equality-in-law test between two path ensembles.
// ---------------------------------------------------------------------------

struct LawTestConfig {
  std::vector<double> times;  // each must be a grid node of both ensembles
  double p_floor = 0.01;      // verdict threshold on Bonferroni-adjusted p-values
  double se_multiple = 5;     // gate on covariance deviations in SE units
  std::size_t min_paths = 500;  // fewer paths in either ensemble -> warning
  int jump_bins = 32;
  bool check_covariance = true;
  bool check_jumps = true;
};

struct LawTestReport {
  struct MarginalTest {
    double time = 0;
    int component = 0;
    double statistic = 0;
    double p_value = 1;
    double p_adjusted = 1;
  };
  struct CovarianceTest {
    double time = 0;
    double max_deviation_se = 0;  // max over entries of |cov_a - cov_b| / SE
  };

  std::vector<MarginalTest> marginals;
  std::vector<CovarianceTest> covariances;
  bool jumps_compared = false;
  double jump_count_p = 1, jump_count_p_adjusted = 1;
  std::vector<double> jump_size_p;  // per coordinate axis of the jump record
  std::vector<double> jump_size_p_adjusted;
  std::size_t tests = 0;  // Bonferroni family size
  double worst_p_adjusted = 1;
  double max_cov_deviation_se = 0;
  bool pass = false;
  std::vector<std::string> warnings;

  std::string summary() const;
};

// Compares the two ensembles at the configured times: per-component KS tests
// of the marginal laws, covariance-matrix deviations in SE units, and (when
// jumps are present on either side) a chi-square test on the per-path jump
// counts plus per-axis chi-square tests on the jump coordinates. p-values are
// Bonferroni-adjusted across the whole family; the verdict requires every
// adjusted p >= p_floor and every covariance deviation < se_multiple.
LawTestReport law_equality_test(const std::vector<SemimartingalePath>& a,
                                const std::vector<SemimartingalePath>& b,
                                const LawTestConfig& config);

// Same test on solved state paths; jump coordinates are the state
// displacements states[index] - pre_jump_state.
LawTestReport law_equality_test(const std::vector<SolutionPath>& a,
                                const std::vector<SolutionPath>& b,
                                const LawTestConfig& config);

nlohmann::json to_json(const LawTestReport& report);

}  // namespace liesde
