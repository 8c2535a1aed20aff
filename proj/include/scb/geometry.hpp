#pragma once

#include <Eigen/Core>

namespace scb {

// Stationary-weighted geometry: <M1, M2>_mu = Tr(M1 diag(mu) M2^T)
//                                           = sum_k mu_k <col_k(M1), col_k(M2)>.
// All distances and projections in this library are measured in it.
double mu_inner(const Eigen::MatrixXd& m1, const Eigen::MatrixXd& m2,
                const Eigen::VectorXd& mu);

double mu_norm_sq(const Eigen::MatrixXd& m, const Eigen::VectorXd& mu);

inline double mu_norm(const Eigen::MatrixXd& m, const Eigen::VectorXd& mu) {
  double s = mu_norm_sq(m, mu);
  return s > 0.0 ? std::sqrt(s) : 0.0;
}

struct TaskConstants {
  double K_P = 0.0;  // |P|_mu^2 - |mu|^2
  double K_Q = 0.0;  // |Q|_mu^2 - 1/T
};

}  // namespace scb
