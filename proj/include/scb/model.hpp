#pragma once

#include <Eigen/Core>
#include <vector>

#include "scb/types.hpp"

namespace scb {

// Per-sample gradient; the attention part is nonzero only in column x_last,
// so it is stored as (active column, dense length-T vector).
struct SampleGrad {
  Eigen::MatrixXd gV;     // N x N
  int col = 0;            // = x_last
  Eigen::VectorXd gA_col; // length T
};

struct GradPair {
  Eigen::MatrixXd gV;  // N x N
  Eigen::MatrixXd gA;  // T x N
};

struct BatchGrads {
  GradPair raw;            // mini-batch mean of the plain gradients
  GradPair preconditioned; // after the centering / 1/mu rescaling projectors
};

// V (X a^(k)) computed by accumulating attention mass into an N-vector.
Eigen::VectorXd forward(const ModelParams& params,
                        const std::vector<std::int32_t>& x, int k);

double per_sample_loss(const ModelParams& params, const Sample& sample);

SampleGrad grad_pair(const ModelParams& params, const Sample& sample);

// Left/right projectors on the V-gradient and per-column centering with the
// 1/mu_k rescaling on the A-gradient. Output satisfies 1^T gV = 0, gV mu = 0
// and column sums of gA are 0, so gradient steps preserve the ModelParams
// constraints.
GradPair precondition(const GradPair& grads, const Eigen::VectorXd& mu);

GradPair batch_grads_raw(const ModelParams& params,
                         const std::vector<Sample>& batch);

BatchGrads batch_grads(const ModelParams& params,
                       const std::vector<Sample>& batch,
                       const Eigen::VectorXd& mu);

// Random matrices projected onto the affine constraint set; useful for
// property tests and oracle sweeps.
ModelParams random_feasible_params(int N, int T, const Eigen::VectorXd& mu,
                                   class Rng& rng);

// Softmax-attention variant: f_sigma(X; V, w) = V X softmax(w), with a single
// trainable logit vector shared across query tokens.
struct SoftmaxModel {
  Eigen::MatrixXd V;  // N x N
  Eigen::VectorXd w;  // length T
};

Eigen::VectorXd softmax_attention(const Eigen::VectorXd& w);

Eigen::VectorXd softmax_forward(const SoftmaxModel& model,
                                const std::vector<std::int32_t>& x);

double softmax_loss(const SoftmaxModel& model, const Sample& sample);

// (diag(a) - a a^T) (V X)^T (f - e_{x_o})
Eigen::VectorXd softmax_grad_w(const SoftmaxModel& model, const Sample& sample);

// (f - e_{x_o}) (X a)^T, same shape as the V-gradient of the linear model.
Eigen::MatrixXd softmax_grad_V(const SoftmaxModel& model, const Sample& sample);

}  // namespace scb
