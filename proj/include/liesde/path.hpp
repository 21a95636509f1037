#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "liesde/chart.hpp"

namespace liesde {

// A jump landing at grid index `index`: values[index] already includes it.
struct JumpMark {
  double time = 0;
  std::size_t index = 0;
  GroupElementJump jump;
};

// Cadlag group-valued path sampled on a finite grid. Between grid points the
// path moves continuously along exp-coordinates cont_increments[k]; at marked
// indices it additionally jumps by a group element on the left:
//   values[k+1] = jump * advance(values[k], cont_increments[k]).
struct SemimartingalePath {
  const LieGroupChart* chart = nullptr;
  std::vector<double> grid;
  std::vector<Vec> values;
  std::vector<Vec> cont_increments;  // size grid.size() - 1
  std::vector<JumpMark> jumps;       // sorted by index, at most one per index, index >= 1

  std::size_t steps() const { return grid.empty() ? 0 : grid.size() - 1; }
  const JumpMark* jump_at(std::size_t index) const;
  Vec left_limit(std::size_t k) const;
  void check_consistency() const;
};

// Rebuilds values[1..] from values[0], the increments and the jump marks.
// The reconstruction is the defining convention, so it is bitwise reproducible.
void replay(SemimartingalePath& path);

SemimartingalePath constant_path(const LieGroupChart& chart, std::vector<double> grid, Vec value);
std::vector<double> uniform_grid(double t0, double t1, std::size_t steps);

// Read-only window onto a path: indices 0..upto are observable.
struct PathView {
  const SemimartingalePath* path = nullptr;
  std::size_t upto = 0;

  double time() const { return path->grid[upto]; }
  const Vec& value() const { return path->values[upto]; }
  const Vec& value_at(std::size_t k) const;
  Vec left_limit() const { return path->left_limit(upto); }
  std::size_t size() const { return upto + 1; }
};

// Control evaluated on the strict past: when producing the move over
// [grid[k], grid[k+1]) the view exposes indices 0..k only.
struct PredictableControl {
  std::function<Vec(const PathView&)> evaluate;
};

// Shortest round-trip decimal rendering (used by every CSV/JSON writer).
std::string format_double(double x);

// Columns: time, z0..z{n-1}, jump (0/1), j0..j{n-1}; jump columns hold the
// group element of the jump and the identity coordinates when there is none.
void write_csv(const SemimartingalePath& path, std::ostream& os);

}  // namespace liesde
