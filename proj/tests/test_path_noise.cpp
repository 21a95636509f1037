#include <cmath>
#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "liesde/linalg.hpp"
#include "liesde/noise.hpp"
#include "liesde/path.hpp"

using namespace liesde;

namespace {

LevyTriplet basic_triplet(int dim) {
  LevyTriplet t;
  t.chart = &shared_additive_chart(dim);
  t.b0 = Vec::Zero(dim);
  t.A0 = Mat::Identity(dim, dim);
  return t;
}

bool paths_bitwise_equal(const SemimartingalePath& a, const SemimartingalePath& b) {
  if (a.grid != b.grid || a.values.size() != b.values.size() || a.jumps.size() != b.jumps.size())
    return false;
  for (std::size_t k = 0; k < a.values.size(); ++k)
    if (!bitwise_equal(a.values[k], b.values[k])) return false;
  for (std::size_t j = 0; j < a.jumps.size(); ++j)
    if (a.jumps[j].index != b.jumps[j].index || !bitwise_equal(a.jumps[j].jump.value, b.jumps[j].jump.value))
      return false;
  return true;
}

}  // namespace

TEST_CASE("uniform grid hits both endpoints exactly") {
  auto g = uniform_grid(0.0, 1.0, 7);
  CHECK(g.size() == 8);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.0);
}

TEST_CASE("format_double round-trips through strtod") {
  for (double x : {0.1, -3.5e17, 1e-300, M_PI, 0.0, -0.0, 123456789.123456789}) {
    std::string s = format_double(x);
    CHECK(std::strtod(s.c_str(), nullptr) == x);
  }
}

TEST_CASE("jump marks reconstruct the path value exactly") {
  auto t = basic_triplet(2);
  t.jump_intensity = 5.0;
  t.hunt_mean = Vec::Zero(2);
  t.jump_sampler = [](Rng& rng) {
    Vec j(2);
    j << rng.normal(), rng.normal();
    return j;
  };
  auto p = sample_levy(t, 4.0, 0.05, 11);
  p.check_consistency();
  CHECK(!p.jumps.empty());
  for (const auto& m : p.jumps) {
    Vec before = p.left_limit(m.index);
    Vec rebuilt = p.chart->multiply(m.jump.value, before);
    CHECK(bitwise_equal(rebuilt, p.values[m.index]));
  }
  CHECK(bitwise_equal(p.values[0], p.chart->identity));
}

TEST_CASE("path view refuses to look past its window") {
  auto p = sample_brownian(1, 1.0, 0.1, 3);
  PathView v{&p, 4};
  CHECK(v.time() == p.grid[4]);
  CHECK_NOTHROW((void)v.value_at(4));
  CHECK_THROWS_AS((void)v.value_at(5), std::logic_error);
}

TEST_CASE("csv serialization carries values and jump marks") {
  auto t = basic_triplet(1);
  t.A0.setZero();
  t.b0 << 1.0;
  t.jump_intensity = 0;
  auto p = sample_levy(t, 1.0, 0.25, 1);
  p.jumps.push_back({p.grid[2], 2, GroupElementJump{Vec::Ones(1) * 0.5}});
  replay(p);
  std::ostringstream os;
  write_csv(p, os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "time,z0,jump,j0");
  std::string line;
  int rows = 0, jump_rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    auto c1 = line.find(','), c2 = line.find(',', line.find(',', c1 + 1) + 1);
    (void)c2;
    std::size_t p2 = line.find(',', c1 + 1);
    std::string flag = line.substr(p2 + 1, line.find(',', p2 + 1) - p2 - 1);
    if (flag == "1") ++jump_rows;
  }
  CHECK(rows == (int)p.grid.size());
  CHECK(jump_rows == 1);
}

TEST_CASE("brownian sampler is deterministic per seed") {
  auto a = sample_brownian(2, 1.0, 0.01, 77);
  auto b = sample_brownian(2, 1.0, 0.01, 77);
  auto c = sample_brownian(2, 1.0, 0.01, 78);
  CHECK(paths_bitwise_equal(a, b));
  CHECK(!paths_bitwise_equal(a, c));
}

TEST_CASE("brownian per-step variance and terminal covariance") {
  const double T = 1.0, dt = 0.01;
  const int paths = 2000;
  Mat cov = Mat::Zero(2, 2);
  double qv_sum = 0;
  long steps_total = 0;
  for (int p = 0; p < paths; ++p) {
    auto z = sample_brownian(2, T, dt, 1000 + p);
    cov += z.values.back() * z.values.back().transpose();
    for (const auto& inc : z.cont_increments) qv_sum += inc.squaredNorm();
    steps_total += (long)z.cont_increments.size() * 2;
  }
  cov /= paths;
  double se_diag = T * std::sqrt(2.0 / paths);
  CHECK(std::abs(cov(0, 0) - T) < 5 * se_diag);
  CHECK(std::abs(cov(1, 1) - T) < 5 * se_diag);
  CHECK(std::abs(cov(0, 1)) < 5 * T / std::sqrt((double)paths));
  // per-step variance through the empirical quadratic variation
  double qv_per_unit = qv_sum / (paths * 2 * T);
  CHECK(std::abs(qv_per_unit - 1.0) < 5 * std::sqrt(2.0 / (double)steps_total));
}

TEST_CASE("degenerate triplet reproduces the brownian sampler bitwise") {
  auto t = basic_triplet(2);
  auto a = sample_levy(t, 1.0, 0.02, 4242);
  auto b = sample_brownian(2, 1.0, 0.02, 4242);
  CHECK(paths_bitwise_equal(a, b));
}

TEST_CASE("pure drift integrates exactly") {
  auto t = basic_triplet(2);
  t.A0.setZero();
  t.b0 << 1.0, 0.0;
  auto p = sample_levy(t, 2.0, 0.1, 9);
  CHECK(std::abs(p.values.back()[0] - 2.0) < 1e-12);
  CHECK(p.values.back()[1] == 0.0);
  CHECK(p.jumps.empty());
}

TEST_CASE("poisson jump counts match the intensity") {
  auto t = basic_triplet(1);
  t.A0.setZero();
  t.jump_intensity = 2.0;
  t.hunt_mean = Vec::Zero(1);
  t.jump_sampler = [](Rng& rng) { return Vec(Vec::Ones(1) * (rng.uniform01() < 0.5 ? -1.0 : 1.0)); };
  const int paths = 500;
  double mean_T = 10.0, count = 0;
  for (int p = 0; p < paths; ++p) count += (double)sample_levy(t, mean_T, 0.5, 300 + p).jumps.size();
  count /= paths;
  CHECK(std::abs(count - 20.0) < 5 * std::sqrt(20.0 / paths));
}

TEST_CASE("hunt compensator shifts the drift of asymmetric jumps") {
  auto t = basic_triplet(1);
  t.A0.setZero();
  t.jump_intensity = 1.5;
  t.jump_sampler = [](Rng&) { return Vec(Vec::Ones(1) * 0.7); };
  double chi = smooth_cutoff(0.7, 1.0);
  t.hunt_mean = Vec(Vec::Ones(1) * 0.7 * chi);

  // MC fallback agrees with the closed form (deterministic law: exactly)
  Vec mc = hunt_mean_mc(t, 5, 2000);
  CHECK(std::abs(mc[0] - (*t.hunt_mean)[0]) < 1e-12);

  const int paths = 4000;
  const double T = 2.0;
  double sum = 0;
  for (int p = 0; p < paths; ++p) sum += sample_levy(t, T, 0.1, 900 + p).values.back()[0];
  double mean = sum / paths;
  double expected = t.jump_intensity * T * (0.7 - 0.7 * chi);
  double se = std::sqrt(t.jump_intensity * T * 0.49 / paths);
  CHECK(std::abs(mean - expected) < 5 * se);
}

TEST_CASE("symmetric jump law has zero hunt mean") {
  auto t = basic_triplet(1);
  t.A0.setZero();
  t.jump_intensity = 1.0;
  t.jump_sampler = [](Rng& rng) {
    double u = 0.5 + 0.4 * rng.uniform01();
    return Vec(Vec::Ones(1) * (rng.uniform01() < 0.5 ? -u : u));
  };
  Vec mc = hunt_mean_mc(t, 21, 100000);
  CHECK(std::abs(mc[0]) < 5 * 0.7 / std::sqrt(100000.0));
}

TEST_CASE("alpha stable sampler intensity and tail counts") {
  CHECK(alpha_stable_intensity(1.0, 1, false, 0.01) == doctest::Approx(200.0));
  CHECK(alpha_stable_intensity(1.0, 2, true, 0.01) == doctest::Approx(2 * M_PI * 100.0));
  const int paths = 200;
  double big = 0, total = 0;
  for (int p = 0; p < paths; ++p) {
    auto z = sample_alpha_stable(1.0, 1, false, 1.0, 0.05, 0.01, 7000 + p);
    total += (double)z.jumps.size();
    for (const auto& m : z.jumps)
      if (std::abs(m.jump.value[0]) >= 1.0) big += 1;
  }
  CHECK(std::abs(total / paths - 200.0) < 5 * std::sqrt(200.0 / paths));
  // nu((-inf,-1] U [1,inf)) = 2 for alpha = 1
  CHECK(std::abs(big / paths - 2.0) < 5 * std::sqrt(2.0 / paths));
}

TEST_CASE("alpha = 2 degenerates to brownian motion") {
  auto a = sample_alpha_stable(2.0, 2, true, 1.0, 0.01, 0.01, 31);
  auto b = sample_brownian(2, 1.0, 0.01, 31);
  CHECK(paths_bitwise_equal(a, b));
}

TEST_CASE("cms oracle: cauchy quartiles and gaussian variance") {
  Rng rng(5150);
  const int n = 200000;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = cms_stable_sample(1.0, rng);
  std::sort(xs.begin(), xs.end());
  CHECK(std::abs(xs[n / 2] - 0.0) < 0.02);
  CHECK(std::abs(xs[n / 4] - (-1.0)) < 0.035);
  CHECK(std::abs(xs[3 * n / 4] - 1.0) < 0.035);
  double s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = cms_stable_sample(2.0, rng);
    s2 += x * x;
  }
  CHECK(std::abs(s2 / n - 2.0) < 5 * std::sqrt(8.0 / n));
}

TEST_CASE("iterated random maps build the advertised products") {
  auto chart = gl_rm_chart(1, 1);
  auto fixed = [](Rng&) { return std::make_pair(Mat(Mat::Ones(1, 1) * 2.0), Vec(Vec::Ones(1))); };
  auto p = sample_discrete_iterated(chart, fixed, 3, 1);
  CHECK(p.jumps.size() == 3);
  CHECK(p.values.back()[0] == 8.0);
  CHECK(p.values.back()[1] == 3.0);

  auto idle = [](Rng&) { return std::make_pair(Mat(Mat::Identity(1, 1)), Vec(Vec::Zero(1))); };
  auto q = sample_discrete_iterated(chart, idle, 4, 1);
  for (const auto& v : q.values) CHECK(bitwise_equal(v, chart.identity));
}

TEST_CASE("singular map samples are resampled or rejected") {
  auto chart = gl_rm_chart(1, 1);
  int calls = 0;
  auto flaky = [&calls](Rng&) {
    ++calls;
    double k = (calls == 1) ? 0.0 : 3.0;
    return std::make_pair(Mat(Mat::Ones(1, 1) * k), Vec(Vec::Zero(1)));
  };
  auto p = sample_discrete_iterated(chart, flaky, 2, 1, true);
  CHECK(p.values.back()[0] == 9.0);
  calls = 0;
  CHECK_THROWS_AS(sample_discrete_iterated(chart, flaky, 2, 1, false), DomainError);
}
