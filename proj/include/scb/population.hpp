#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "scb/model.hpp"
#include "scb/rng.hpp"
#include "scb/types.hpp"

namespace scb {

// Coordinates of (V, A) relative to the population trajectory: V decomposes
// as alpha_V P + (1 - alpha_V) mu 1^T + Delta_V with Delta_V mu-orthogonal
// to the line, and A likewise against Q and uniform attention.
struct PopulationProjection {
  double alpha_V = 0.0, alpha_A = 0.0;
  double beta_V = 1.0, beta_A = 1.0;
  double K_P = 0.0, K_Q = 0.0;
  double K_VP = 0.0, K_AQ = 0.0;
  double K_V = 0.0, K_A = 0.0;
  double delta_V_mu_sq = 0.0, delta_A_mu_sq = 0.0;
  Eigen::MatrixXd Delta_V;  // N x N
  Eigen::MatrixXd Delta_A;  // T x N
};

PopulationProjection project(const ModelParams& params, const GroundTruth& gt);

struct ExpectedGrads {
  GradPair raw;
  GradPair preconditioned;
};

// Closed-form expectations of the gradients over a fresh sample.
ExpectedGrads expected_grads(const ModelParams& params, const GroundTruth& gt);

// E of the per-sample loss, in closed form.
double population_loss(const ModelParams& params, const GroundTruth& gt);

struct AlphaPair {
  double alpha_V = 0.0;
  double alpha_A = 0.0;
};

// One step of the 2-D signal recursion with explicit step sizes:
//   alpha_V += eta_V K_Q (1 - alpha_A alpha_V) alpha_A + eta_V (1-alpha_V)/T
//   alpha_A += eta_A K_P (1 - alpha_V alpha_A) alpha_V
AlphaPair alpha_recursion_general(AlphaPair a, double eta_V, double eta_A,
                                  double K_P, double K_Q, double T);

// Normalized step sizes eta_V = eta/K_Q, eta_A = eta/K_P.
AlphaPair alpha_recursion_step(AlphaPair a, double eta, double K_P, double K_Q,
                               double T);

// The scalar noise functionals entering the projection/error dynamics.
struct NoiseFunctionals {
  double hV_dot_P = 0.0;       // <h_V, P>_mu
  double hA_dot_Q = 0.0;       // <h_A, Q>_mu (h_A is the effective noise)
  double hV_dot_DeltaV = 0.0;  // <h_V, Delta_V>_mu
  double hA_dot_DeltaA = 0.0;
  double hV_musq = 0.0;        // |h_V|_mu^2
  double hA_musq = 0.0;
};

struct ProjectionState {
  double alpha_V = 0.0, alpha_A = 0.0;
  double delta_V_mu_sq = 0.0, delta_A_mu_sq = 0.0;  // |Delta|_mu^2
};

// Exact one-step recursion for (alpha_V, alpha_A, |Delta_V|^2, |Delta_A|^2)
// given the measured noise terms. These are algebraic identities of the
// update rule, not approximations.
ProjectionState projection_dynamics_step(const ProjectionState& s,
                                         const NoiseFunctionals& noise,
                                         double eta_V, double eta_A,
                                         const TaskConstants& consts, double T);

// Deviation of a batch gradient from its expectation, with the mu-geometry
// summaries used by the dynamics identities and the trainer log.
struct NoiseDiagnostics {
  Eigen::MatrixXd h_V;  // N x N
  Eigen::MatrixXd h_A;  // T x N
  double hV_musq = 0.0, hA_musq = 0.0;
  double hV_dot_P = 0.0, hA_dot_Q = 0.0;
};

NoiseDiagnostics noise_diagnostics(const GradPair& batch_preconditioned,
                                   const GradPair& expected_preconditioned,
                                   const GroundTruth& gt);

NoiseFunctionals noise_functionals(const Eigen::MatrixXd& h_V,
                                   const Eigen::MatrixXd& h_A_effective,
                                   const PopulationProjection& proj,
                                   const GroundTruth& gt);

// ---- Reduced Gaussian-noise simulator ------------------------------------

enum class NoiseMode { sgd, prox };

// Task summary for the reduced simulator; no matrices involved.
struct ReducedConsts {
  int N = 3;
  double T = 5000;
  int Q = 2;
  double K_P = 0.4;
  double K_Q = 0.5;
  double mu_norm_sq = 0.35;
};

struct ReducedState {
  double alpha_V = 0.0, alpha_A = 0.0;
  double delta_A_sq = 0.0, delta_V_sq = 0.0;  // |Delta|_mu^2 / K, as in the logs
};

struct ReducedNoiseScales {
  // std of <h, target/|target|_mu>_mu per unit 1/sqrt(B); measured once at a
  // small instance and extrapolated, overridable.
  double dir_A = 0.0;
  double dir_V = 0.0;
  // E|h|_mu^2 * B
  double norm_A_sq = 0.0;
  double norm_V_sq = 0.0;
};

// Default scales from the gradient-variance scaling: |h_A|_mu^2 = O(T N^2)
// for plain minibatch noise, O(Q N^2) once the proximal step filters the
// off-support coordinates; |h_V|_mu^2 = O(N^3).
ReducedNoiseScales default_noise_scales(const ReducedConsts& c, NoiseMode mode,
                                        double sigma_scale);

struct ReducedConfig {
  long steps = 1000;
  double eta = 0.01;  // normalized: eta_V = eta/K_Q, eta_A = eta/K_P
  int B = 64;
  NoiseMode mode = NoiseMode::prox;
  double sigma_scale = 1.0;
  ReducedNoiseScales scales;  // zeros -> use default_noise_scales
  int log_every = 1;
};

struct ReducedRow {
  long step;
  ReducedState state;
};

std::vector<ReducedRow> reduced_noise_simulate(const ReducedConsts& consts,
                                               const ReducedConfig& cfg,
                                               std::uint64_t seed);

}  // namespace scb
