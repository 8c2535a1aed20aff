#include "scb/transfer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/geometry.hpp"

namespace scb {

void TransferConfig::validate(const GroundTruth& gt,
                              std::vector<std::string>* warnings) const {
  if (!(theta > 0.0 && theta < 1.0))
    throw ValidationError("TransferConfig: theta must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ValidationError("TransferConfig: gamma must lie in (0, 1]");
  if (first_step_batch <= 0)
    throw ValidationError("TransferConfig: first_step_batch must be positive");
  const double K_P = gt.constants().K_P;
  if (warnings && eps_tmp > 1.0 / (gt.dims().N * K_P)) {
    std::ostringstream os;
    os << "transfer: eps_tmp = " << eps_tmp << " exceeds 1/(N K_P) = "
       << 1.0 / (gt.dims().N * K_P) << "; first-step accuracy not guaranteed";
    warnings->push_back(os.str());
  }
}

Eigen::MatrixXd metropolis_chain(const Eigen::VectorXd& mu, Rng& rng) {
  const int N = static_cast<int>(mu.size());
  // Symmetric proposal: uniform mixed with a random symmetrized permutation.
  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = N - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  Eigen::MatrixXd S = Eigen::MatrixXd::Constant(N, N, 0.5 / N);
  for (int i = 0; i < N; ++i) {
    S(perm[i], i) += 0.25;
    S(i, perm[i]) += 0.25;
  }
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) {
    double off = 0.0;
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      R(j, i) = S(j, i) * std::min(1.0, mu[j] / mu[i]);
      off += R(j, i);
    }
    R(i, i) = 1.0 - off;
  }
  return R;
}

PretrainedTask gen_pretrained(const GroundTruth& gt, double gamma, Rng& rng,
                              PretrainKind kind) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ValidationError("gen_pretrained: gamma must lie in (0, 1]");
  const auto& mu = gt.mu();
  const int N = gt.dims().N;
  Eigen::MatrixXd R;
  if (kind == PretrainKind::line) {
    R = mu * Eigen::RowVectorXd::Ones(N);
  } else {
    R = metropolis_chain(mu, rng);
  }
  PretrainedTask task;
  task.P_hat = gamma * gt.P() + (1.0 - gamma) * R;

  const double corr = mu_inner(task.P_hat, gt.P(), mu) - mu.squaredNorm();
  if (corr < mu.squaredNorm()) {
    std::ostringstream os;
    os << "gen_pretrained: correlation condition fails, <P_hat,P>_mu - |mu|^2 = "
       << corr << " < |mu|^2 = " << mu.squaredNorm()
       << "; increase gamma";
    throw TransferError(os.str());
  }
  const double ratio =
      mu_norm_sq(task.P_hat, mu) / mu_norm_sq(gt.P(), mu);
  if (ratio < 0.25 || ratio > 4.0)
    throw TransferError("gen_pretrained: |P_hat|_mu^2 is not within a factor "
                        "4 of |P|_mu^2");
  return task;
}

ModelParams init_transfer(const PretrainedTask& task, const GroundTruth& gt,
                          double theta) {
  if (!(theta > 0.0 && theta < 1.0))
    throw ValidationError("init_transfer: theta must lie in (0, 1)");
  const int N = gt.dims().N, T = gt.dims().T;
  ModelParams p;
  p.V = theta * task.P_hat +
        (1.0 - theta) * gt.mu() * Eigen::RowVectorXd::Ones(N);
  p.A = Eigen::MatrixXd::Constant(T, N, 1.0 / T);
  return p;
}

namespace {

// Streaming batch gradient of A at uniform attention, block-accumulated so
// large first-step batches never materialize.
Eigen::MatrixXd streaming_gA(const ModelParams& params, const GroundTruth& gt,
                             int B, std::uint64_t seed,
                             std::uint64_t* sample_counter) {
  const Eigen::Index T = params.A.rows(), N = params.A.cols();
  constexpr int kBlock = 256;
  std::vector<Eigen::MatrixXd> partials;
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(T, N);
  int in_block = 0;
  for (int i = 0; i < B; ++i) {
    Rng rng(seed, "data", *sample_counter + static_cast<std::uint64_t>(i));
    Sample s = sample_instance(gt, rng);
    SampleGrad g = grad_pair(params, s);
    block.col(g.col) += g.gA_col;
    if (++in_block == kBlock) {
      partials.push_back(std::move(block));
      block = Eigen::MatrixXd::Zero(T, N);
      in_block = 0;
    }
  }
  if (in_block > 0) partials.push_back(std::move(block));
  *sample_counter += static_cast<std::uint64_t>(B);
  // Pairwise reduction over blocks.
  while (partials.size() > 1) {
    std::vector<Eigen::MatrixXd> next;
    for (std::size_t i = 0; i + 1 < partials.size(); i += 2)
      next.push_back(partials[i] + partials[i + 1]);
    if (partials.size() % 2 == 1) next.push_back(partials.back());
    partials = std::move(next);
  }
  return partials.front() / static_cast<double>(B);
}

}  // namespace

void transfer_first_step(TrainState& state, const GroundTruth& gt,
                         const TransferConfig& cfg, GradSource source) {
  const auto& mu = gt.mu();
  const int N = gt.dims().N;
  const Eigen::Index T = state.params.A.rows();
  const TaskConstants consts = gt.constants();
  const double eta_A = cfg.eta_first / consts.K_P;

  Eigen::MatrixXd gA;
  if (source == GradSource::population) {
    gA = expected_grads(state.params, gt).preconditioned.gA;
  } else {
    Eigen::MatrixXd raw = streaming_gA(state.params, gt, cfg.first_step_batch,
                                       state.seed, &state.sample_counter);
    GradPair pair{Eigen::MatrixXd::Zero(N, N), std::move(raw)};
    gA = precondition(pair, mu).gA;
  }

  state.params.A -= eta_A * gA;

  // Magnitude thresholding, then uniform redistribution of the removed mass.
  const double threshold = cfg.threshold_const * cfg.theta / (N * consts.K_P);
  for (Eigen::Index k = 0; k < state.params.A.cols(); ++k) {
    double kept = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (std::abs(state.params.A(t, k)) > threshold) {
        kept += state.params.A(t, k);
      } else {
        state.params.A(t, k) = 0.0;
      }
    }
    state.params.A.col(k).array() += (1.0 - kept) / static_cast<double>(T);
  }
  ++state.step;

  PopulationProjection proj = project(state.params, gt);
  const double ratio = proj.alpha_A / proj.alpha_V;
  if (ratio < 1.0 - 5.0 * cfg.eps_tmp || ratio > 1.0 + 5.0 * cfg.eps_tmp) {
    std::ostringstream os;
    os << "transfer_first_step: alpha_A/alpha_V = " << ratio
       << " outside [" << 1.0 - 5.0 * cfg.eps_tmp << ", "
       << 1.0 + 5.0 * cfg.eps_tmp
       << "]; increase first_step_batch (or theta is below the feasibility "
          "threshold)";
    throw TransferError(os.str());
  }
  state.trajectory.push_back(
      make_row(state.params, gt, state.step, 0,
               population_loss(state.params, gt)));
}

TrainState run_transfer_pipeline(const GroundTruth& gt,
                                 const PretrainedTask& task,
                                 const TransferConfig& cfg,
                                 const Schedule& schedule, std::uint64_t seed,
                                 const RunOptions& opts) {
  TrainState state;
  state.seed = seed;
  state.params = init_transfer(task, gt, cfg.theta);
  transfer_first_step(state, gt, cfg, opts.source);

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

}  // namespace scb
