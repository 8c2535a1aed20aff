#include "scb/types.hpp"

#include <cmath>
#include <sstream>

#include "scb/error.hpp"

namespace scb {

void Dims::validate() const {
  if (T < 1) throw ValidationError("Dims: T must be >= 1");
  if (N < 2) throw ValidationError("Dims: N must be >= 2");
  if (Q < 1 || Q > T) throw ValidationError("Dims: Q must satisfy 1 <= Q <= T");
  if (!(C >= 1.0)) throw ValidationError("Dims: C must be >= 1");
}

GroundTruth::GroundTruth(Dims dims, Eigen::MatrixXd P, Eigen::VectorXd mu,
                         Eigen::MatrixXd Qmat)
    : dims_(dims), P_(std::move(P)), mu_(std::move(mu)), Qmat_(std::move(Qmat)) {
  build_support();
  validate();
  const double long_seq = std::pow(static_cast<double>(dims_.N) * dims_.Q, 10.0);
  if (static_cast<double>(dims_.T) < long_seq) {
    std::ostringstream os;
    os << "long-sequence condition not met: T = " << dims_.T << " < (NQ)^10 = "
       << long_seq;
    warnings_.push_back(os.str());
  }
}

GroundTruth GroundTruth::unchecked(Dims dims, Eigen::MatrixXd P,
                                   Eigen::VectorXd mu, Eigen::MatrixXd Qmat) {
  GroundTruth gt;
  gt.dims_ = dims;
  gt.P_ = std::move(P);
  gt.mu_ = std::move(mu);
  gt.Qmat_ = std::move(Qmat);
  gt.build_support();
  return gt;
}

void GroundTruth::build_support() {
  support_.assign(Qmat_.cols(), {});
  for (Eigen::Index k = 0; k < Qmat_.cols(); ++k)
    for (Eigen::Index t = 0; t < Qmat_.rows(); ++t)
      if (Qmat_(t, k) != 0.0) support_[k].push_back(static_cast<int>(t));
}

TaskConstants GroundTruth::constants() const {
  TaskConstants c;
  c.K_P = mu_norm_sq(P_, mu_) - mu_.squaredNorm();
  c.K_Q = mu_norm_sq(Qmat_, mu_) - 1.0 / dims_.T;
  if (c.K_P < mu_.squaredNorm() - 1e-12)
    throw ValidationError("task_constants: K_P < |mu|^2, transition too close to trivial");
  return c;
}

void GroundTruth::validate() const {
  dims_.validate();
  const int N = dims_.N;
  const int T = dims_.T;
  if (P_.rows() != N || P_.cols() != N)
    throw ValidationError("GroundTruth: P must be N x N");
  if (mu_.size() != N) throw ValidationError("GroundTruth: mu must have length N");
  if (Qmat_.rows() != T || Qmat_.cols() != N)
    throw ValidationError("GroundTruth: Qmat must be T x N");

  for (int k = 0; k < N; ++k) {
    if (P_.col(k).minCoeff() < -1e-12)
      throw ValidationError("GroundTruth: P has negative entries");
    if (std::abs(P_.col(k).sum() - 1.0) > kStationarityTol)
      throw ValidationError("GroundTruth: P column " + std::to_string(k) +
                            " does not sum to 1");
  }
  if ((P_ * mu_ - mu_).cwiseAbs().maxCoeff() > kStationarityTol)
    throw ValidationError("GroundTruth: mu is not stationary for P");
  if (std::abs(mu_.sum() - 1.0) > kStationarityTol)
    throw ValidationError("GroundTruth: mu does not sum to 1");

  const double mu_lo = 1.0 / (dims_.C * N), mu_hi = dims_.C / N;
  for (int k = 0; k < N; ++k)
    if (mu_[k] < mu_lo - 1e-12 || mu_[k] > mu_hi + 1e-12)
      throw ValidationError("GroundTruth: mu entry " + std::to_string(k) +
                            " outside well-conditioned range");

  const double q_lo = 1.0 / (dims_.C * dims_.Q), q_hi = dims_.C / dims_.Q;
  for (int k = 0; k < N; ++k) {
    int nnz = 0;
    double colsum = 0.0;
    for (int t = 0; t < T; ++t) {
      const double q = Qmat_(t, k);
      if (q == 0.0) continue;
      ++nnz;
      colsum += q;
      if (q < q_lo - 1e-12 || q > q_hi + 1e-12)
        throw ValidationError("GroundTruth: Qmat entry (" + std::to_string(t) +
                              "," + std::to_string(k) +
                              ") outside well-conditioned range");
    }
    if (nnz > dims_.Q)
      throw ValidationError("GroundTruth: Qmat column " + std::to_string(k) +
                            " has more than Q nonzeros");
    if (std::abs(colsum - 1.0) > kStationarityTol)
      throw ValidationError("GroundTruth: Qmat column " + std::to_string(k) +
                            " does not sum to 1");
  }

  // Nontrivial transition.
  const double K_P = mu_norm_sq(P_, mu_) - mu_.squaredNorm();
  if (K_P < mu_.squaredNorm() - 1e-12)
    throw ValidationError("GroundTruth: nontrivial-transition condition fails "
                          "(K_P < |mu|^2)");
}

ModelParams ModelParams::scratch_init(const GroundTruth& gt) {
  const int N = gt.dims().N, T = gt.dims().T;
  ModelParams p;
  p.V = gt.mu() * Eigen::RowVectorXd::Ones(N);
  p.A = Eigen::MatrixXd::Constant(T, N, 1.0 / T);
  return p;
}

double ModelParams::max_constraint_violation(const Eigen::VectorXd& mu) const {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < V.cols(); ++k)
    worst = std::max(worst, std::abs(V.col(k).sum() - 1.0));
  worst = std::max(worst, (V * mu - mu).cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < A.cols(); ++k)
    worst = std::max(worst, std::abs(A.col(k).sum() - 1.0));
  return worst;
}

bool ModelParams::satisfies_constraints(const Eigen::VectorXd& mu,
                                        double tol) const {
  return max_constraint_violation(mu) <= tol;
}

void ModelParams::reproject(const Eigen::VectorXd& mu) {
  const Eigen::Index N = V.cols();
  // Column sums of V back to 1, then V mu back to mu; the second correction
  // keeps the column sums because 1^T (mu - V mu) = 0 once they are exact.
  for (Eigen::Index k = 0; k < N; ++k)
    V.col(k).array() -= (V.col(k).sum() - 1.0) / static_cast<double>(V.rows());
  V += (mu - V * mu) * (mu.transpose() / mu.squaredNorm());
  const double T = static_cast<double>(A.rows());
  for (Eigen::Index k = 0; k < A.cols(); ++k)
    A.col(k).array() += (1.0 - A.col(k).sum()) / T;
}

}  // namespace scb
