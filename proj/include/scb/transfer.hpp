#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scb/trainer.hpp"
#include "scb/types.hpp"

namespace scb {

struct TransferConfig {
  double theta = 0.3;        // mixing weight of the pretrained transition in V0
  double gamma = 1.0;        // correlation knob when generating P_hat
  double eps_tmp = 0.1;      // relative accuracy target of the first step
  int first_step_batch = 100000;
  double threshold_const = 0.1;  // constant in theta/(N K_P)
  double eta_first = 1.0;        // normalized: step size eta_first / K_P

  void validate(const GroundTruth& gt, std::vector<std::string>* warnings) const;
};

enum class PretrainKind {
  line,        // R = mu 1^T: P_hat stays on the population line
  metropolis,  // R = Metropolis-Hastings chain targeting mu
};

struct PretrainedTask {
  Eigen::MatrixXd P_hat;  // N x N, column-stochastic, P_hat mu = mu
};

// Column-stochastic R with R mu = mu built from a Metropolis-Hastings chain
// targeting mu (symmetric proposal).
Eigen::MatrixXd metropolis_chain(const Eigen::VectorXd& mu, Rng& rng);

// P_hat = gamma P + (1-gamma) R. Throws TransferError when the correlation
// condition <P_hat, P>_mu - |mu|^2 >= |mu|^2 fails.
PretrainedTask gen_pretrained(const GroundTruth& gt, double gamma, Rng& rng,
                              PretrainKind kind = PretrainKind::metropolis);

// V = theta P_hat + (1 - theta) mu 1^T, A uniform.
ModelParams init_transfer(const PretrainedTask& task, const GroundTruth& gt,
                          double theta);

// One preconditioned gradient step on A only, followed by magnitude
// thresholding at threshold_const * theta / (N K_P) and the uniform-mass
// redistribution. Throws TransferError when alpha_A/alpha_V lands outside
// [1 - 5 eps_tmp, 1 + 5 eps_tmp].
void transfer_first_step(TrainState& state, const GroundTruth& gt,
                         const TransferConfig& cfg,
                         GradSource source = GradSource::minibatch);

// init -> first step -> stage 2 -> thresholding-normalization -> stage 3.
// Stage 1 is never executed.
TrainState run_transfer_pipeline(const GroundTruth& gt,
                                 const PretrainedTask& task,
                                 const TransferConfig& cfg,
                                 const Schedule& schedule, std::uint64_t seed,
                                 const RunOptions& opts);

}  // namespace scb
