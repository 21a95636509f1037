#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>

#include "liesde/path.hpp"
#include "liesde/rng.hpp"

namespace liesde {

// Levy noise description: drift b0 and diffusion A0 in right-invariant frame
// coordinates, plus a finite-intensity jump part (nu0 = intensity * jump law).
// b0 is the drift with respect to the chart's Hunt functions, so a nonzero
// jump part contributes the compensator -intensity * E[h(J)] per unit time to
// the continuous drift of the sampled path.
struct LevyTriplet {
  const LieGroupChart* chart = nullptr;
  Vec b0;
  Mat A0;
  double jump_intensity = 0;
  std::function<Vec(Rng&)> jump_sampler;  // group element of one jump, law nu0 / intensity
  std::optional<Vec> hunt_mean;           // E[h(J)] when known in closed form

  void validate() const;
};

// Symmetric square root of a PSD matrix; eigenvalues below -1e-12 are an error,
// small negative noise is clamped to zero.
Mat psd_sqrt(const Mat& a);

// Monte Carlo estimate of E[h(J)] under the jump law (relative error ~1e-3
// at the default sample count for O(1) Hunt values).
Vec hunt_mean_mc(const LevyTriplet& triplet, std::uint64_t seed, int samples = 200000);

SemimartingalePath sample_brownian(int dim, double horizon, double step, std::uint64_t seed);

SemimartingalePath sample_levy(const LevyTriplet& triplet, double horizon, double step,
                               std::uint64_t seed);

// Truncated stable path: jumps with modulus >= eps from nu(dz) = |z|^-(n+alpha) dz
// (isotropic when the flag is set, independent axis directions otherwise),
// alpha = 2 degenerates to Brownian motion. The jump law is symmetric, so the
// discarded small jumps need no drift compensation.
SemimartingalePath sample_alpha_stable(double alpha, int dim, bool isotropic, double horizon,
                                       double step, double eps, std::uint64_t seed);

double alpha_stable_intensity(double alpha, int dim, bool isotropic, double eps);

// Pure-jump path of an iterated random map on GL(m) x R^m with unit-spaced
// jumps: Z1_n = K_n * Z1_{n-1}, Z2_n = Z2_{n-1} + H_n.
SemimartingalePath sample_discrete_iterated(const LieGroupChart& group,
                                            const std::function<std::pair<Mat, Vec>(Rng&)>& step_law,
                                            int steps, std::uint64_t seed,
                                            bool resample_singular = true);

// Chambers-Mallows-Stuck draw of a standard symmetric alpha-stable variable
// (characteristic function exp(-|theta|^alpha)); test oracle only, paths come
// from the truncated-jump construction above.
double cms_stable_sample(double alpha, Rng& rng);

}  // namespace liesde
