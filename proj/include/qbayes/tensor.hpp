#pragma once

#include <Eigen/Dense>

namespace qbayes {

// Dense row-major matrix of 64-bit floats; the single numeric carrier for the
// whole library. Scalars are 1x1, row vectors 1xm, column vectors nx1.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace qbayes
