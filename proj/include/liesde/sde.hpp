#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "liesde/noise.hpp"
#include "liesde/path.hpp"

namespace liesde {

using VectorField = std::function<Vec(const Vec&)>;
using MatrixField = std::function<Mat(const Vec&)>;

// Solution on M, truncated at the stopping time when the state leaves M or
// crosses the explosion bound. The partial path is a valid solution up to its
// last grid time; stop_time records where the violation was detected.
struct SolutionPath {
  std::vector<double> grid;
  std::vector<Vec> states;
  // (grid index, pre-jump state): the left limit of the state at a grid node
  // where the noise jumped; the displacement is states[index] - pre-jump state.
  std::vector<std::pair<std::size_t, Vec>> jumps;
  bool exploded = false;
  double stop_time = 0;
};

// SDE defined by psi_bar(x, z', z, k) with psi_bar(x, z, z, k) = x. Optional
// analytic first/second z'-derivatives at z' = z feed the Ito-Taylor scheme;
// jump_shortcut(x, dz, k) is used at jump marks when present (canonical maps
// install psi there, which keeps the two solvers bitwise-identical on
// pure-jump noise).
struct GeometricalSdeMap {
  int state_dim = 0;
  const LieGroupChart* noise_chart = nullptr;
  std::function<Vec(const Vec&, const Vec&, const Vec&, const Vec&)> psi_bar;
  std::function<Vec(const PathView&)> parameter;  // null: empty parameter
  std::function<bool(const Vec&)> state_domain;   // null: all of R^m
  double explosion_bound = 1e8;
  std::function<Mat(const Vec&, const Vec&, const Vec&)> d1;               // (x,z,k) -> m x n
  std::function<std::vector<Mat>(const Vec&, const Vec&, const Vec&)> d2;  // [i] -> n x n
  std::function<Vec(const Vec&, const Vec&, const Vec&)> jump_shortcut;
};

// SDE defined by the one-increment map psi(x, dz, k), psi(x, 1_N, k) = x.
struct CanonicalSdeMap {
  int state_dim = 0;
  const LieGroupChart* noise_chart = nullptr;
  std::function<Vec(const Vec&, const Vec&, const Vec&)> psi;  // (x, dz, k)
  std::function<Vec(const PathView&)> parameter;
  std::function<bool(const Vec&)> state_domain;
  double explosion_bound = 1e8;

  GeometricalSdeMap as_geometrical() const;
};

// Marcus equation: jump rule and continuous part both flow along dz^a Y_a.
struct MarcusSde {
  int state_dim = 0;
  std::vector<VectorField> fields;
  double flow_tol = 1e-9;

  CanonicalSdeMap as_canonical() const;  // noise chart: R^{fields.size()}
};

SolutionPath solve_increment_map(const CanonicalSdeMap& sde, const SemimartingalePath& noise,
                                 const Vec& x0);
SolutionPath solve_ito_taylor(const GeometricalSdeMap& sde, const SemimartingalePath& noise,
                              const Vec& x0);

// psi_bar(x, z', z) = x + sigma(x) * (z' - z)
GeometricalSdeMap as_affine(MatrixField sigma, int state_dim, int noise_dim);

// Smooth SDE driven by a Levy process split as (clock, brownian block, jump
// block): dX = mu dZ^1 + sigma dZ^{2..n1} + compensated jumps through F. The
// canonical map absorbs the compensator into the drift:
//   mu~(x) = mu(x) - integral_{|w|<=1} (F(x,w) - dF/dw(x,w) . w) nu0(dw),
// computed exactly over discrete atoms or over samples frozen at construction.
struct SmoothLevySpec {
  VectorField mu;
  MatrixField sigma;       // m x brownian_dim, null when brownian_dim = 0
  int brownian_dim = 0;
  std::function<Vec(const Vec&, const Vec&)> F;      // (x, w) -> R^m, F(x,0) = 0
  std::function<Mat(const Vec&, const Vec&)> dF_dw;  // optional analytic m x jump_dim
  int jump_dim = 0;
  std::vector<std::pair<double, Vec>> nu_atoms;  // (mass, location): exact quadrature
  std::function<Vec(Rng&)> nu_sampler;           // with nu_intensity when no atoms
  double nu_intensity = 0;
  int mc_samples = 20000;
  std::uint64_t mc_seed = 0x5DEECE66D;
};
CanonicalSdeMap as_smooth_levy(const SmoothLevySpec& spec, int state_dim);

// Max |psi_bar(x, z, z, k) - x| over the given probes (defining identity).
double identity_defect(const GeometricalSdeMap& sde,
                       const std::vector<std::pair<Vec, Vec>>& xz_probes, const Vec& k = Vec());
double identity_defect(const CanonicalSdeMap& sde, const std::vector<Vec>& x_probes,
                       const Vec& k = Vec());

void write_csv(const SolutionPath& path, std::ostream& os);

}  // namespace liesde
