#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "scb/geometry.hpp"

namespace scb {

// Absolute tolerance for affine-constraint invariants.
inline constexpr double kConstraintTol = 1e-9;
// Tolerance for stationarity (P mu = mu) at validation time.
inline constexpr double kStationarityTol = 1e-8;

struct Dims {
  int T = 0;       // sequence length
  int N = 0;       // vocabulary size
  int Q = 0;       // attention sparsity, Q <= T
  double C = 1.0;  // conditioning constant, >= 1

  void validate() const;  // throws ValidationError
};

// The task definition: transition matrix P (columns are per-token transition
// vectors), its stationary distribution mu, and the sparse attention-target
// matrix Qmat (column k is the position distribution used when the last
// token is k).
class GroundTruth {
 public:
  GroundTruth(Dims dims, Eigen::MatrixXd P, Eigen::VectorXd mu,
              Eigen::MatrixXd Qmat);

  // Skips validation; for deliberately degenerate test setups.
  static GroundTruth unchecked(Dims dims, Eigen::MatrixXd P,
                               Eigen::VectorXd mu, Eigen::MatrixXd Qmat);

  const Dims& dims() const { return dims_; }
  const Eigen::MatrixXd& P() const { return P_; }
  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& Qmat() const { return Qmat_; }
  // Nonzero row indices of column k of Qmat, ascending.
  const std::vector<int>& support(int k) const { return support_[k]; }

  TaskConstants constants() const;

  // Non-fatal advisories collected at construction (e.g. the long-sequence
  // condition T >= (NQ)^10, which desk-scale instances never meet).
  const std::vector<std::string>& warnings() const { return warnings_; }

  void validate() const;  // throws ValidationError with the failing invariant

 private:
  GroundTruth() = default;
  void build_support();

  Dims dims_;
  Eigen::MatrixXd P_;     // N x N, column-stochastic
  Eigen::VectorXd mu_;    // length N
  Eigen::MatrixXd Qmat_;  // T x N, <= Q nonzeros per column
  std::vector<std::vector<int>> support_;
  std::vector<std::string> warnings_;
};

// Trainable parameters of the one-layer linear transformer. The affine
// constraints 1^T V = 1^T, V mu = mu, 1^T a^(k) = 1 are what the
// preconditioning and projection steps preserve.
struct ModelParams {
  Eigen::MatrixXd V;  // N x N
  Eigen::MatrixXd A;  // T x N

  static ModelParams scratch_init(const GroundTruth& gt);

  // Max violation of each constraint; all should be <= tol.
  double max_constraint_violation(const Eigen::VectorXd& mu) const;
  bool satisfies_constraints(const Eigen::VectorXd& mu,
                             double tol = kConstraintTol) const;
  // Re-impose the affine constraints exactly (drift correction).
  void reproject(const Eigen::VectorXd& mu);
};

// One data point: tokens x_1..x_T, the query token x_{T+1}, and the output
// token x_o.
struct Sample {
  std::vector<std::int32_t> x;
  std::int32_t x_last = 0;
  std::int32_t x_out = 0;
};

}  // namespace scb
