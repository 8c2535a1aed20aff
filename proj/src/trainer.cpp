#include "scb/trainer.hpp"

#include <cmath>
#include <limits>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/geometry.hpp"

namespace scb {

void StopRule::validate() const {
  if (!fixed_steps && !signal_threshold)
    throw ValidationError("StopRule: need fixed_steps or signal_threshold");
  if (fixed_steps && *fixed_steps < 0)
    throw ValidationError("StopRule: fixed_steps must be >= 0");
}

StageConfig make_stage(double eta, double lambda, int batch_size, StopRule stop,
                       const TaskConstants& consts) {
  StageConfig cfg;
  cfg.eta_V = eta / consts.K_Q;
  cfg.eta_A = eta / consts.K_P;
  cfg.lambda = lambda;
  cfg.batch_size = batch_size;
  cfg.stop = std::move(stop);
  return cfg;
}

void Schedule::validate() const {
  stage1.stop.validate();
  stage2.stop.validate();
  stage3.stop.validate();
  if (stage3.eta_A != 0.0)
    throw ValidationError("Schedule: stage 3 must have eta_A = 0");
  if (stage3.lambda != 0.0)
    throw ValidationError("Schedule: stage 3 must have lambda = 0");
}

void step_V(ModelParams& params, const Eigen::MatrixXd& gV_preconditioned,
            double eta_V) {
  params.V -= eta_V * gV_preconditioned;
}

void step_V(TrainState& state, const GroundTruth& gt,
            const std::vector<Sample>& batch, double eta_V) {
  BatchGrads g = batch_grads(state.params, batch, gt.mu());
  step_V(state.params, g.preconditioned.gV, eta_V);
}

double soft_threshold(double v, double lambda, long* guard_count) {
  if (v >= lambda) return v - lambda;
  if (v >= -lambda) return 0.0;
  // Outside the two cases the update rule is proven to produce; fold back
  // symmetrically and count it rather than aborting.
  if (guard_count) ++*guard_count;
  return v + lambda;
}

long step_A_proximal(ModelParams& params,
                     const Eigen::MatrixXd& gA_preconditioned, double eta_A,
                     double lambda) {
  if (eta_A == 0.0 && lambda == 0.0) return 0;  // frozen attention (stage 3)
  const Eigen::Index T = params.A.rows();
  long guard = 0;
  for (Eigen::Index k = 0; k < params.A.cols(); ++k) {
    Eigen::VectorXd a = params.A.col(k) - eta_A * gA_preconditioned.col(k);
    if (lambda > 0.0)
      for (Eigen::Index t = 0; t < T; ++t)
        a[t] = soft_threshold(a[t], lambda, &guard);
    a.array() += (1.0 - a.sum()) / static_cast<double>(T);
    params.A.col(k) = a;
  }
  return guard;
}

void step_A_proximal(TrainState& state, const GroundTruth& gt,
                     const std::vector<Sample>& batch, double eta_A,
                     double lambda) {
  BatchGrads g = batch_grads(state.params, batch, gt.mu());
  state.prox_guard_count +=
      step_A_proximal(state.params, g.preconditioned.gA, eta_A, lambda);
}

Eigen::MatrixXd thresholding_projection(const Eigen::MatrixXd& A,
                                        double lambda0) {
  const Eigen::Index T = A.rows();
  Eigen::MatrixXd out = A;
  for (Eigen::Index k = 0; k < A.cols(); ++k) {
    double kept = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (out(t, k) >= lambda0) {
        kept += out(t, k);
      } else {
        out(t, k) = 0.0;
      }
    }
    out.col(k).array() += (1.0 - kept) / static_cast<double>(T);
  }
  return out;
}

Eigen::MatrixXd thresholding_normalization(const Eigen::MatrixXd& A,
                                           double cutoff) {
  const Eigen::Index T = A.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(T, A.cols());
  for (Eigen::Index k = 0; k < A.cols(); ++k) {
    double kept = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (A(t, k) >= cutoff) {
        out(t, k) = A(t, k);
        kept += A(t, k);
      }
    }
    if (kept <= 0.0)
      throw RoundingError("thresholding_normalization: column " +
                          std::to_string(k) + " has no entry >= cutoff");
    out.col(k) /= kept;
  }
  return out;
}

double off_support_max(const Eigen::MatrixXd& A, const GroundTruth& gt) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < A.cols(); ++k) {
    const auto& supp = gt.support(static_cast<int>(k));
    auto it = supp.begin();
    for (Eigen::Index t = 0; t < A.rows(); ++t) {
      if (it != supp.end() && *it == t) {
        ++it;
        continue;
      }
      worst = std::max(worst, std::abs(A(t, k)));
    }
  }
  return worst;
}

TrajectoryRow make_row(const ModelParams& params, const GroundTruth& gt,
                       long step, int stage, double loss_est) {
  PopulationProjection proj = project(params, gt);
  TrajectoryRow row;
  row.step = step;
  row.stage = stage;
  row.loss_est = loss_est;
  row.alpha_V = proj.alpha_V;
  row.alpha_A = proj.alpha_A;
  row.delta_V_mu = std::sqrt(std::max(0.0, proj.delta_V_mu_sq));
  row.delta_A_mu = std::sqrt(std::max(0.0, proj.delta_A_mu_sq));
  row.dist_V_mu = mu_norm(params.V - gt.P(), gt.mu());
  row.dist_A_mu = mu_norm(params.A - gt.Qmat(), gt.mu());
  row.off_support_max = off_support_max(params.A, gt);
  row.K_V = proj.K_V;
  row.K_A = proj.K_A;
  return row;
}

namespace {

GradPair gaussian_population_grads(const ModelParams& params,
                                   const GroundTruth& gt, double noise_std,
                                   std::uint64_t seed, long step) {
  ExpectedGrads eg = expected_grads(params, gt);
  if (noise_std <= 0.0) return eg.preconditioned;
  Rng rng(seed, "noise", static_cast<std::uint64_t>(step));
  const Eigen::Index N = params.V.cols(), T = params.A.rows();
  GradPair noisy;
  noisy.gV = Eigen::MatrixXd::NullaryExpr(
      N, N, [&](Eigen::Index, Eigen::Index) { return noise_std * rng.normal(); });
  noisy.gA = Eigen::MatrixXd::NullaryExpr(
      T, N, [&](Eigen::Index, Eigen::Index) { return noise_std * rng.normal(); });
  GradPair projected = precondition(noisy, gt.mu());
  projected.gV += eg.preconditioned.gV;
  projected.gA += eg.preconditioned.gA;
  return projected;
}

}  // namespace

void run_stage(TrainState& state, const GroundTruth& gt, const StageConfig& cfg,
               int stage_id, const RunOptions& opts) {
  cfg.stop.validate();
  const long limit = cfg.stop.fixed_steps ? *cfg.stop.fixed_steps
                                          : cfg.stop.max_steps;
  const int log_every = std::max(1, opts.log_every);

  for (long local = 0; local < limit; ++local) {
    if (cfg.stop.signal_threshold) {
      PopulationProjection proj = project(state.params, gt);
      if (std::max(proj.alpha_V, proj.alpha_A) >= *cfg.stop.signal_threshold)
        break;
    }

    double loss_est = 0.0;
    GradPair grads;
    if (opts.source == GradSource::minibatch) {
      std::vector<Sample> batch =
          sample_batch(gt, cfg.batch_size, state.seed, state.sample_counter);
      state.sample_counter += static_cast<std::uint64_t>(cfg.batch_size);
      for (const Sample& s : batch) loss_est += per_sample_loss(state.params, s);
      loss_est /= static_cast<double>(batch.size());
      grads = batch_grads(state.params, batch, gt.mu()).preconditioned;
    } else if (opts.source == GradSource::population) {
      loss_est = population_loss(state.params, gt);
      grads = expected_grads(state.params, gt).preconditioned;
    } else {
      loss_est = population_loss(state.params, gt);
      grads = gaussian_population_grads(state.params, gt,
                                        opts.gaussian_noise_std, state.seed,
                                        state.step);
    }

    ModelParams before;
    if (opts.observer) before = state.params;

    step_V(state.params, grads.gV, cfg.eta_V);
    state.prox_guard_count +=
        step_A_proximal(state.params, grads.gA, cfg.eta_A, cfg.lambda);

    if (opts.observer) {
      Eigen::MatrixXd G_lambda =
          cfg.eta_A != 0.0
              ? Eigen::MatrixXd((before.A - state.params.A) / cfg.eta_A)
              : Eigen::MatrixXd::Zero(state.params.A.rows(),
                                      state.params.A.cols());
      StepTrace trace;
      trace.step = state.step;
      trace.before = &before;
      trace.after = &state.params;
      trace.gV_applied = &grads.gV;
      trace.G_lambda = &G_lambda;
      trace.eta_V = cfg.eta_V;
      trace.eta_A = cfg.eta_A;
      trace.lambda = cfg.lambda;
      opts.observer(trace);
    }

    ++state.step;
    if (state.params.V.cwiseAbs().maxCoeff() > opts.divergence_max)
      throw DivergenceError("run_stage: |V|_inf exceeded " +
                            std::to_string(opts.divergence_max) + " at step " +
                            std::to_string(state.step));
    if (opts.reproject_every > 0 && state.step % opts.reproject_every == 0)
      state.params.reproject(gt.mu());
    if (state.step % log_every == 0 || local + 1 == limit)
      state.trajectory.push_back(
          make_row(state.params, gt, state.step, stage_id, loss_est));
  }
}

TrainState run_algorithm1(const GroundTruth& gt, const Schedule& schedule,
                          std::optional<ModelParams> init, std::uint64_t seed,
                          const RunOptions& opts) {
  schedule.validate();
  TrainState state;
  state.seed = seed;
  state.params = init ? std::move(*init) : ModelParams::scratch_init(gt);

  run_stage(state, gt, schedule.stage1, 1, opts);

  PopulationProjection proj = project(state.params, gt);
  const double lambda0 =
      schedule.lambda0.value_or(0.5 * proj.alpha_V / gt.dims().Q);
  SeparationDiagnostics sep;
  sep.lambda0_used = lambda0;
  sep.max_off_support = off_support_max(state.params.A, gt);
  sep.min_on_support = std::numeric_limits<double>::infinity();
  for (int k = 0; k < gt.dims().N; ++k)
    for (int t : gt.support(k))
      sep.min_on_support = std::min(sep.min_on_support, state.params.A(t, k));
  state.separation = sep;

  state.params.A = thresholding_projection(state.params.A, lambda0);
  state.trajectory.push_back(make_row(state.params, gt, state.step, 1,
                                      state.trajectory.empty()
                                          ? 0.0
                                          : state.trajectory.back().loss_est));

  run_stage(state, gt, schedule.stage2, 2, opts);

  const double cutoff = schedule.stage3_cutoff.value_or(0.25 / gt.dims().Q);
  state.params.A = thresholding_normalization(state.params.A, cutoff);
  state.trajectory.push_back(make_row(state.params, gt, state.step, 2,
                                      state.trajectory.empty()
                                          ? 0.0
                                          : state.trajectory.back().loss_est));

  run_stage(state, gt, schedule.stage3, 3, opts);
  return state;
}

namespace {

// Unpreconditioned, unprojected plain-SGD step for the ablation variant.
void plain_step(TrainState& state, const GroundTruth& gt,
                const StageConfig& cfg, int stage_id, const RunOptions& opts) {
  const int log_every = std::max(1, opts.log_every);
  const long limit = cfg.stop.fixed_steps ? *cfg.stop.fixed_steps
                                          : cfg.stop.max_steps;
  for (long local = 0; local < limit; ++local) {
    std::vector<Sample> batch =
        sample_batch(gt, cfg.batch_size, state.seed, state.sample_counter);
    state.sample_counter += static_cast<std::uint64_t>(cfg.batch_size);
    double loss_est = 0.0;
    for (const Sample& s : batch) loss_est += per_sample_loss(state.params, s);
    loss_est /= static_cast<double>(batch.size());
    GradPair grads = batch_grads_raw(state.params, batch);
    state.params.V -= cfg.eta_V * grads.gV;
    state.params.A -= cfg.eta_A * grads.gA;
    ++state.step;
    if (state.params.V.cwiseAbs().maxCoeff() > opts.divergence_max)
      throw DivergenceError("vanilla sgd (plain): |V|_inf exceeded bound at step " +
                            std::to_string(state.step));
    if (state.step % log_every == 0 || local + 1 == limit)
      state.trajectory.push_back(
          make_row(state.params, gt, state.step, stage_id, loss_est));
  }
}

}  // namespace

TrainState run_vanilla_sgd(const GroundTruth& gt, const Schedule& schedule,
                           std::optional<ModelParams> init, std::uint64_t seed,
                           const RunOptions& opts, bool preconditioned) {
  TrainState state;
  state.seed = seed;
  state.params = init ? std::move(*init) : ModelParams::scratch_init(gt);

  StageConfig s1 = schedule.stage1;
  s1.lambda = 0.0;
  StageConfig s2 = schedule.stage2;
  s2.lambda = 0.0;
  if (preconditioned) {
    run_stage(state, gt, s1, 1, opts);
    run_stage(state, gt, s2, 2, opts);
  } else {
    plain_step(state, gt, s1, 1, opts);
    plain_step(state, gt, s2, 2, opts);
  }
  return state;
}

Eigen::MatrixXd population_v_refit(const Eigen::MatrixXd& A,
                                   const GroundTruth& gt) {
  const auto& mu = gt.mu();
  const double A_musq = mu_norm_sq(A, mu);
  const double QA_mu = mu_inner(gt.Qmat(), A, mu);
  const Eigen::MatrixXd mu1t =
      mu * Eigen::RowVectorXd::Ones(gt.dims().N);
  return mu1t + (QA_mu / A_musq) * (gt.P() - mu1t);
}

}  // namespace scb
