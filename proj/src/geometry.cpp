#include "scb/geometry.hpp"

#include "scb/error.hpp"

namespace scb {

double mu_inner(const Eigen::MatrixXd& m1, const Eigen::MatrixXd& m2,
                const Eigen::VectorXd& mu) {
  if (m1.rows() != m2.rows() || m1.cols() != m2.cols())
    throw DimensionError("mu_inner: operand shapes differ");
  if (m1.cols() != mu.size())
    throw DimensionError("mu_inner: column count does not match mu length");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < m1.cols(); ++k)
    acc += mu[k] * m1.col(k).dot(m2.col(k));
  return acc;
}

double mu_norm_sq(const Eigen::MatrixXd& m, const Eigen::VectorXd& mu) {
  if (m.cols() != mu.size())
    throw DimensionError("mu_norm_sq: column count does not match mu length");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < m.cols(); ++k)
    acc += mu[k] * m.col(k).squaredNorm();
  return acc;
}

}  // namespace scb
