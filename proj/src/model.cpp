#include "scb/model.hpp"

#include <cmath>
#include <functional>

#include "scb/error.hpp"
#include "scb/rng.hpp"

namespace scb {

namespace {

// X a as an N-vector of accumulated attention mass.
Eigen::VectorXd mass_vector(Eigen::Index N, const Eigen::VectorXd& a,
                            const std::vector<std::int32_t>& x) {
  Eigen::VectorXd xa = Eigen::VectorXd::Zero(N);
  const int T = static_cast<int>(x.size());
  for (int t = 0; t < T; ++t) xa[x[t]] += a[t];
  return xa;
}

void check_tokens(const std::vector<std::int32_t>& x, Eigen::Index T,
                  Eigen::Index N) {
  if (static_cast<Eigen::Index>(x.size()) != T)
    throw DimensionError("token sequence length does not match A");
  for (auto v : x)
    if (v < 0 || v >= N) throw DimensionError("token index out of range");
}

}  // namespace

Eigen::VectorXd forward(const ModelParams& params,
                        const std::vector<std::int32_t>& x, int k) {
  const Eigen::Index N = params.V.cols();
  check_tokens(x, params.A.rows(), N);
  if (k < 0 || k >= params.A.cols())
    throw DimensionError("forward: query token out of range");
  return params.V * mass_vector(N, params.A.col(k), x);
}

double per_sample_loss(const ModelParams& params, const Sample& sample) {
  Eigen::VectorXd r = forward(params, sample.x, sample.x_last);
  r[sample.x_out] -= 1.0;
  return 0.5 * r.squaredNorm();
}

SampleGrad grad_pair(const ModelParams& params, const Sample& sample) {
  const Eigen::Index N = params.V.cols();
  const Eigen::Index T = params.A.rows();
  check_tokens(sample.x, T, N);
  const Eigen::VectorXd xa = mass_vector(N, params.A.col(sample.x_last), sample.x);
  Eigen::VectorXd r = params.V * xa;
  r[sample.x_out] -= 1.0;

  SampleGrad g;
  g.gV = r * xa.transpose();
  g.col = sample.x_last;
  const Eigen::VectorXd w = params.V.transpose() * r;
  g.gA_col.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) g.gA_col[t] = w[sample.x[t]];
  return g;
}

GradPair precondition(const GradPair& grads, const Eigen::VectorXd& mu) {
  if (mu.minCoeff() <= 0.0)
    throw ValidationError("precondition: mu must be entrywise positive");
  if (grads.gV.cols() != mu.size() || grads.gA.cols() != mu.size())
    throw DimensionError("precondition: gradient shapes do not match mu");

  const Eigen::Index N = mu.size();
  Eigen::MatrixXd gV = grads.gV;
  gV.rowwise() -= gV.colwise().sum() / static_cast<double>(N);  // I - 11^T/N
  gV = gV * mu.cwiseInverse().asDiagonal();
  gV -= (gV * mu) * (mu.transpose() / mu.squaredNorm());  // I - mu mu^T/|mu|^2

  Eigen::MatrixXd gA = grads.gA;
  const double T = static_cast<double>(gA.rows());
  for (Eigen::Index k = 0; k < N; ++k) {
    gA.col(k).array() -= gA.col(k).sum() / T;  // I - 11^T/T
    gA.col(k) /= mu[k];
  }
  return {std::move(gV), std::move(gA)};
}

namespace {

// Fixed-tree pairwise reduction over [lo, hi); order independent of any
// threading and stable for reproducibility.
template <typename Fetch>
Eigen::MatrixXd tree_sum(Eigen::Index rows, Eigen::Index cols, int lo, int hi,
                         const Fetch& fetch) {
  if (hi - lo == 1) return fetch(lo);
  const int mid = lo + (hi - lo) / 2;
  return tree_sum(rows, cols, lo, mid, fetch) +
         tree_sum(rows, cols, mid, hi, fetch);
}

}  // namespace

GradPair batch_grads_raw(const ModelParams& params,
                         const std::vector<Sample>& batch) {
  if (batch.empty()) throw ValidationError("batch_grads: empty batch");
  const int B = static_cast<int>(batch.size());
  const Eigen::Index N = params.V.cols();
  const Eigen::Index T = params.A.rows();

  std::vector<SampleGrad> per(B);
  for (int i = 0; i < B; ++i) per[i] = grad_pair(params, batch[i]);

  GradPair out;
  out.gV = tree_sum(N, N, 0, B,
                    [&](int i) -> Eigen::MatrixXd { return per[i].gV; }) /
           static_cast<double>(B);
  out.gA = tree_sum(T, N, 0, B, [&](int i) -> Eigen::MatrixXd {
             Eigen::MatrixXd m = Eigen::MatrixXd::Zero(T, N);
             m.col(per[i].col) = per[i].gA_col;
             return m;
           }) /
           static_cast<double>(B);
  return out;
}

BatchGrads batch_grads(const ModelParams& params,
                       const std::vector<Sample>& batch,
                       const Eigen::VectorXd& mu) {
  BatchGrads g;
  g.raw = batch_grads_raw(params, batch);
  g.preconditioned = precondition(g.raw, mu);
  return g;
}

ModelParams random_feasible_params(int N, int T, const Eigen::VectorXd& mu,
                                   Rng& rng) {
  ModelParams p;
  p.V = Eigen::MatrixXd::NullaryExpr(
      N, N, [&](Eigen::Index, Eigen::Index) { return rng.uniform(); });
  p.A = Eigen::MatrixXd::NullaryExpr(
      T, N, [&](Eigen::Index, Eigen::Index) { return rng.uniform() / T; });
  // Two passes drive the constraint residuals to rounding level.
  p.reproject(mu);
  p.reproject(mu);
  return p;
}

Eigen::VectorXd softmax_attention(const Eigen::VectorXd& w) {
  const double m = w.maxCoeff();
  Eigen::VectorXd a = (w.array() - m).exp();
  a /= a.sum();
  return a;
}

Eigen::VectorXd softmax_forward(const SoftmaxModel& model,
                                const std::vector<std::int32_t>& x) {
  const Eigen::Index N = model.V.cols();
  check_tokens(x, model.w.size(), N);
  return model.V * mass_vector(N, softmax_attention(model.w), x);
}

double softmax_loss(const SoftmaxModel& model, const Sample& sample) {
  Eigen::VectorXd r = softmax_forward(model, sample.x);
  r[sample.x_out] -= 1.0;
  return 0.5 * r.squaredNorm();
}

Eigen::VectorXd softmax_grad_w(const SoftmaxModel& model,
                               const Sample& sample) {
  const Eigen::Index T = model.w.size();
  const Eigen::VectorXd a = softmax_attention(model.w);
  Eigen::VectorXd r =
      model.V * mass_vector(model.V.cols(), a, sample.x);
  r[sample.x_out] -= 1.0;
  const Eigen::VectorXd vr = model.V.transpose() * r;
  Eigen::VectorXd u(T);
  for (Eigen::Index t = 0; t < T; ++t) u[t] = vr[sample.x[t]];
  return a.cwiseProduct(u) - a * a.dot(u);
}

Eigen::MatrixXd softmax_grad_V(const SoftmaxModel& model,
                               const Sample& sample) {
  const Eigen::VectorXd a = softmax_attention(model.w);
  const Eigen::VectorXd xa = mass_vector(model.V.cols(), a, sample.x);
  Eigen::VectorXd r = model.V * xa;
  r[sample.x_out] -= 1.0;
  return r * xa.transpose();
}

}  // namespace scb
