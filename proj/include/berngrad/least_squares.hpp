#pragma once

#include <Eigen/Dense>

namespace berngrad {

// Singular values at or below this fraction of the largest are treated as 0.
inline constexpr double kPinvRelTol = 1e-10;

struct LeastSquaresFit {
  Eigen::VectorXd coeffs;
  double rss = 0.0;
};

// Minimum-norm least-squares solution of X_S b ~= y (pseudo-inverse), so
// rank-deficient and underdetermined supports are handled uniformly.
inline LeastSquaresFit solve_inner_ls(const Eigen::MatrixXd& xs,
                                      const Eigen::VectorXd& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(kPinvRelTol);
  LeastSquaresFit fit;
  fit.coeffs = svd.solve(y);
  fit.rss = (y - xs * fit.coeffs).squaredNorm();
  return fit;
}

}  // namespace berngrad
