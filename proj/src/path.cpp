#include "liesde/path.hpp"

#include <charconv>
#include <ostream>
#include <stdexcept>

#include "liesde/linalg.hpp"

namespace liesde {

const JumpMark* SemimartingalePath::jump_at(std::size_t index) const {
  auto it = std::lower_bound(jumps.begin(), jumps.end(), index,
                             [](const JumpMark& m, std::size_t i) { return m.index < i; });
  if (it != jumps.end() && it->index == index) return &*it;
  return nullptr;
}

Vec SemimartingalePath::left_limit(std::size_t k) const {
  if (k == 0 || !jump_at(k)) return values[k];
  return advance(*chart, values[k - 1], cont_increments[k - 1]);
}

void SemimartingalePath::check_consistency() const {
  if (!chart) throw std::logic_error("path: no chart");
  if (values.size() != grid.size()) throw std::logic_error("path: values/grid size mismatch");
  if (!grid.empty() && cont_increments.size() != grid.size() - 1)
    throw std::logic_error("path: increments size mismatch");
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    if (!(grid[k] < grid[k + 1])) throw std::logic_error("path: grid not strictly increasing");
  for (std::size_t j = 0; j < jumps.size(); ++j) {
    if (jumps[j].index == 0 || jumps[j].index >= grid.size())
      throw std::logic_error("path: jump index out of range");
    if (j > 0 && jumps[j - 1].index >= jumps[j].index)
      throw std::logic_error("path: jump marks not strictly sorted");
    if (jumps[j].time != grid[jumps[j].index]) throw std::logic_error("path: jump time off-grid");
  }
  SemimartingalePath copy = *this;
  replay(copy);
  for (std::size_t k = 0; k < values.size(); ++k)
    if (!bitwise_equal(values[k], copy.values[k]))
      throw std::logic_error("path: values do not replay from increments");
}

void replay(SemimartingalePath& path) {
  path.values.resize(path.grid.size());
  for (std::size_t k = 0; k + 1 < path.grid.size(); ++k) {
    Vec next = advance(*path.chart, path.values[k], path.cont_increments[k]);
    if (const JumpMark* m = path.jump_at(k + 1)) next = path.chart->multiply(m->jump.value, next);
    path.values[k + 1] = next;
  }
}

SemimartingalePath constant_path(const LieGroupChart& chart, std::vector<double> grid, Vec value) {
  SemimartingalePath p;
  p.chart = &chart;
  p.grid = std::move(grid);
  p.values.assign(p.grid.size(), value);
  p.cont_increments.assign(p.steps(), Vec::Zero(chart.dim));
  return p;
}

std::vector<double> uniform_grid(double t0, double t1, std::size_t steps) {
  std::vector<double> g(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k)
    g[k] = t0 + (t1 - t0) * (double)k / (double)steps;
  g.back() = t1;
  return g;
}

const Vec& PathView::value_at(std::size_t k) const {
  if (k > upto) throw std::logic_error("PathView: index beyond the observable window");
  return path->values[k];
}

std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_csv(const SemimartingalePath& path, std::ostream& os) {
  const int n = path.chart->dim;
  os << "time";
  for (int i = 0; i < n; ++i) os << ",z" << i;
  os << ",jump";
  for (int i = 0; i < n; ++i) os << ",j" << i;
  os << "\n";
  const Vec& id = path.chart->identity;
  for (std::size_t k = 0; k < path.grid.size(); ++k) {
    os << format_double(path.grid[k]);
    for (int i = 0; i < n; ++i) os << ',' << format_double(path.values[k][i]);
    const JumpMark* m = path.jump_at(k);
    os << ',' << (m ? 1 : 0);
    const Vec& j = m ? m->jump.value : id;
    for (int i = 0; i < n; ++i) os << ',' << format_double(j[i]);
    os << "\n";
  }
}

}  // namespace liesde
