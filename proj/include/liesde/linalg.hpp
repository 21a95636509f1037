#pragma once

#include <Eigen/Dense>

namespace liesde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline bool bitwise_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace liesde
