#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "scb/model.hpp"
#include "scb/population.hpp"
#include "scb/types.hpp"

namespace scb {

enum class GradSource { minibatch, population, population_gaussian };

struct StopRule {
  std::optional<long> fixed_steps;
  // Stop once max(alpha_V, alpha_A) reaches this value.
  std::optional<double> signal_threshold;
  long max_steps = 1000000;  // safety cap for threshold-based stops

  void validate() const;  // at least one rule present
};

struct StageConfig {
  double eta_V = 0.0;
  double eta_A = 0.0;
  double lambda = 0.0;
  int batch_size = 1;
  StopRule stop;
};

// eta_V = eta/K_Q, eta_A = eta/K_P, the normalized step-size convention.
StageConfig make_stage(double eta, double lambda, int batch_size, StopRule stop,
                       const TaskConstants& consts);

struct Schedule {
  StageConfig stage1;
  std::optional<double> lambda0;  // nullopt: 0.5 * alpha_V / Q at the boundary
  StageConfig stage2;
  std::optional<double> stage3_cutoff;  // nullopt: 0.25 / Q
  StageConfig stage3;                   // eta_A and lambda must be 0

  void validate() const;
};

struct TrajectoryRow {
  long step = 0;
  int stage = 0;
  double loss_est = 0.0;
  double alpha_V = 0.0, alpha_A = 0.0;
  double delta_V_mu = 0.0, delta_A_mu = 0.0;
  double dist_V_mu = 0.0, dist_A_mu = 0.0;
  double off_support_max = 0.0;
  double K_V = 0.0, K_A = 0.0;  // kept for consistency checks, not in the CSV
};

// Separation between attention mass on and off the target support, captured
// at the stage-1 / stage-2 boundary before thresholding.
struct SeparationDiagnostics {
  double min_on_support = 0.0;
  double max_off_support = 0.0;
  double lambda0_used = 0.0;
};

struct TrainState {
  ModelParams params;
  long step = 0;
  std::uint64_t seed = 0;
  std::uint64_t sample_counter = 0;
  long prox_guard_count = 0;  // proximal inputs seen below -lambda
  std::vector<TrajectoryRow> trajectory;
  std::optional<SeparationDiagnostics> separation;
};

struct StepTrace {
  long step = 0;
  const ModelParams* before = nullptr;
  const ModelParams* after = nullptr;
  // Preconditioned V-gradient actually applied and the effective A update
  // G_lambda = -(A_after - A_before)/eta_A.
  const Eigen::MatrixXd* gV_applied = nullptr;
  const Eigen::MatrixXd* G_lambda = nullptr;
  double eta_V = 0.0, eta_A = 0.0;
  double lambda = 0.0;
};
using StepObserver = std::function<void(const StepTrace&)>;

struct RunOptions {
  GradSource source = GradSource::minibatch;
  int log_every = 1;
  // Absolute per-entry noise std for the population_gaussian source,
  // already including any 1/sqrt(B) factor.
  double gaussian_noise_std = 0.0;
  long reproject_every = 1000;
  double divergence_max = 1e3;  // on |V|_inf
  StepObserver observer;
};

// V <- V - eta_V * (preconditioned batch V-gradient).
void step_V(ModelParams& params, const Eigen::MatrixXd& gV_preconditioned,
            double eta_V);
void step_V(TrainState& state, const GroundTruth& gt,
            const std::vector<Sample>& batch, double eta_V);

// Three-part attention update: preconditioned GD step, coordinatewise
// soft-threshold by lambda, projection back to column sums 1. Returns the
// number of coordinates that fell below -lambda (handled symmetrically).
long step_A_proximal(ModelParams& params,
                     const Eigen::MatrixXd& gA_preconditioned, double eta_A,
                     double lambda);
void step_A_proximal(TrainState& state, const GroundTruth& gt,
                     const std::vector<Sample>& batch, double eta_A,
                     double lambda);

double soft_threshold(double v, double lambda, long* guard_count = nullptr);

// Zero entries below lambda0 and redistribute the removed mass uniformly so
// column sums stay exactly 1.
Eigen::MatrixXd thresholding_projection(const Eigen::MatrixXd& A,
                                        double lambda0);

// Keep entries >= cutoff and renormalize each column; throws RoundingError
// naming the first column whose support empties.
Eigen::MatrixXd thresholding_normalization(const Eigen::MatrixXd& A,
                                           double cutoff);

void run_stage(TrainState& state, const GroundTruth& gt, const StageConfig& cfg,
               int stage_id, const RunOptions& opts);

TrainState run_algorithm1(const GroundTruth& gt, const Schedule& schedule,
                          std::optional<ModelParams> init, std::uint64_t seed,
                          const RunOptions& opts);

// Baseline: the same pipeline with lambda = 0 everywhere and no thresholding
// steps. preconditioned = false uses plain gradients with no projection at
// all (the ablation).
TrainState run_vanilla_sgd(const GroundTruth& gt, const Schedule& schedule,
                           std::optional<ModelParams> init, std::uint64_t seed,
                           const RunOptions& opts, bool preconditioned = true);

// Closed-form minimizer of the population loss in V given A (used as the
// selectable stage-3 alternative).
Eigen::MatrixXd population_v_refit(const Eigen::MatrixXd& A,
                                   const GroundTruth& gt);

double off_support_max(const Eigen::MatrixXd& A, const GroundTruth& gt);

TrajectoryRow make_row(const ModelParams& params, const GroundTruth& gt,
                       long step, int stage, double loss_est);

}  // namespace scb
