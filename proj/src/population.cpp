#include "scb/population.hpp"

#include <algorithm>
#include <cmath>

#include "scb/error.hpp"
#include "scb/geometry.hpp"

namespace scb {

PopulationProjection project(const ModelParams& params, const GroundTruth& gt) {
  const auto& mu = gt.mu();
  const double T = static_cast<double>(gt.dims().T);
  PopulationProjection p;
  p.K_P = mu_norm_sq(gt.P(), mu) - mu.squaredNorm();
  p.K_Q = mu_norm_sq(gt.Qmat(), mu) - 1.0 / T;
  if (p.K_P <= 1e-12 || p.K_Q <= 1e-12)
    throw ValidationError("project: degenerate task (K_P or K_Q <= 0)");

  p.K_VP = mu_inner(params.V, gt.P(), mu) - mu.squaredNorm();
  p.K_AQ = mu_inner(params.A, gt.Qmat(), mu) - 1.0 / T;
  p.K_V = mu_norm_sq(params.V, mu) - mu.squaredNorm();
  p.K_A = mu_norm_sq(params.A, mu) - 1.0 / T;
  p.alpha_V = p.K_VP / p.K_P;
  p.alpha_A = p.K_AQ / p.K_Q;
  p.beta_V = 1.0 - p.alpha_V;
  p.beta_A = 1.0 - p.alpha_A;

  const Eigen::Index N = mu.size();
  p.Delta_V = params.V - p.alpha_V * gt.P() -
              p.beta_V * mu * Eigen::RowVectorXd::Ones(N);
  p.Delta_A = params.A - p.alpha_A * gt.Qmat() -
              Eigen::MatrixXd::Constant(params.A.rows(), N, p.beta_A / T);
  p.delta_V_mu_sq = mu_norm_sq(p.Delta_V, mu);
  p.delta_A_mu_sq = mu_norm_sq(p.Delta_A, mu);
  return p;
}

ExpectedGrads expected_grads(const ModelParams& params, const GroundTruth& gt) {
  const auto& mu = gt.mu();
  const auto& P = gt.P();
  const auto& Qm = gt.Qmat();
  const Eigen::Index N = mu.size();
  const double T = static_cast<double>(gt.dims().T);

  const double A_musq = mu_norm_sq(params.A, mu);
  const double QA_mu = mu_inner(Qm, params.A, mu);
  const double V_musq = mu_norm_sq(params.V, mu);
  const double VP_mu = mu_inner(params.V, P, mu);
  const double mu_sq = mu.squaredNorm();

  ExpectedGrads out;
  const Eigen::VectorXd Vmu = params.V * mu;
  out.raw.gV = A_musq * params.V * mu.asDiagonal() +
               (1.0 - A_musq) * Vmu * mu.transpose() -
               QA_mu * P * mu.asDiagonal() -
               (1.0 - QA_mu) * mu * mu.transpose();
  out.raw.gA.resize(params.A.rows(), N);
  for (Eigen::Index k = 0; k < N; ++k) {
    // mu_k ( (|V|^2_mu - |mu|^2) a^(k) + |mu|^2 1 - <V,P>_mu q^(k)
    //        - (1 - q^(k)) |mu|^2 )
    out.raw.gA.col(k) =
        mu[k] * ((V_musq - mu_sq) * params.A.col(k).array() + mu_sq -
                 VP_mu * Qm.col(k).array() - (1.0 - Qm.col(k).array()) * mu_sq)
                    .matrix();
  }

  const Eigen::MatrixXd mu1t = mu * Eigen::RowVectorXd::Ones(N);
  out.preconditioned.gV = A_musq * (params.V - mu1t) - QA_mu * (P - mu1t);
  out.preconditioned.gA.resize(params.A.rows(), N);
  for (Eigen::Index k = 0; k < N; ++k) {
    out.preconditioned.gA.col(k) =
        (V_musq - mu_sq) * (params.A.col(k).array() - 1.0 / T).matrix() -
        (VP_mu - mu_sq) * (Qm.col(k).array() - 1.0 / T).matrix();
  }
  return out;
}

double population_loss(const ModelParams& params, const GroundTruth& gt) {
  const auto& mu = gt.mu();
  const double A_musq = mu_norm_sq(params.A, mu);
  const double QA_mu = mu_inner(gt.Qmat(), params.A, mu);
  const double V_musq = mu_norm_sq(params.V, mu);
  const double VP_mu = mu_inner(params.V, gt.P(), mu);
  const Eigen::VectorXd Vmu = params.V * mu;
  const double Vmu_sq = Vmu.squaredNorm();
  const double muVmu = mu.dot(Vmu);
  // E|e_{x_o}|^2 = 1; cross and quadratic terms from the moment formulas.
  const double cross = QA_mu * VP_mu + (1.0 - QA_mu) * muVmu;
  const double quad = A_musq * V_musq + (1.0 - A_musq) * Vmu_sq;
  return 0.5 * (1.0 - 2.0 * cross + quad);
}

AlphaPair alpha_recursion_general(AlphaPair a, double eta_V, double eta_A,
                                  double K_P, double K_Q, double T) {
  const double cross = 1.0 - a.alpha_A * a.alpha_V;
  AlphaPair next;
  next.alpha_V = a.alpha_V + eta_V * K_Q * cross * a.alpha_A +
                 eta_V * (1.0 - a.alpha_V) / T;
  next.alpha_A = a.alpha_A + eta_A * K_P * cross * a.alpha_V;
  return next;
}

AlphaPair alpha_recursion_step(AlphaPair a, double eta, double K_P, double K_Q,
                               double T) {
  return alpha_recursion_general(a, eta / K_Q, eta / K_P, K_P, K_Q, T);
}

ProjectionState projection_dynamics_step(const ProjectionState& s,
                                         const NoiseFunctionals& noise,
                                         double eta_V, double eta_A,
                                         const TaskConstants& consts,
                                         double T) {
  const double K_P = consts.K_P, K_Q = consts.K_Q;
  const double cross = 1.0 - s.alpha_A * s.alpha_V;

  ProjectionState next;
  next.alpha_V = s.alpha_V + eta_V * K_Q * cross * s.alpha_A +
                 eta_V * (1.0 - s.alpha_V) / T -
                 eta_V * s.alpha_V * s.delta_A_mu_sq -
                 eta_V / K_P * noise.hV_dot_P;
  next.alpha_A = s.alpha_A + eta_A * K_P * cross * s.alpha_V -
                 eta_A * s.alpha_A * s.delta_V_mu_sq -
                 eta_A / K_Q * noise.hA_dot_Q;

  const double cA = 1.0 - eta_A * K_P * s.alpha_V * s.alpha_V -
                    eta_A * s.delta_V_mu_sq;
  next.delta_A_mu_sq = cA * cA * s.delta_A_mu_sq -
                       2.0 * eta_A * cA * noise.hA_dot_DeltaA -
                       eta_A * eta_A / K_Q * noise.hA_dot_Q * noise.hA_dot_Q +
                       eta_A * eta_A * noise.hA_musq;

  const double cV = 1.0 - eta_V * (s.alpha_A * s.alpha_A * K_Q + 1.0 / T) -
                    eta_V * s.delta_A_mu_sq;
  next.delta_V_mu_sq = cV * cV * s.delta_V_mu_sq -
                       2.0 * eta_V * cV * noise.hV_dot_DeltaV -
                       eta_V * eta_V / K_P * noise.hV_dot_P * noise.hV_dot_P +
                       eta_V * eta_V * noise.hV_musq;
  return next;
}

NoiseDiagnostics noise_diagnostics(const GradPair& batch_preconditioned,
                                   const GradPair& expected_preconditioned,
                                   const GroundTruth& gt) {
  NoiseDiagnostics d;
  d.h_V = batch_preconditioned.gV - expected_preconditioned.gV;
  d.h_A = batch_preconditioned.gA - expected_preconditioned.gA;
  d.hV_musq = mu_norm_sq(d.h_V, gt.mu());
  d.hA_musq = mu_norm_sq(d.h_A, gt.mu());
  d.hV_dot_P = mu_inner(d.h_V, gt.P(), gt.mu());
  d.hA_dot_Q = mu_inner(d.h_A, gt.Qmat(), gt.mu());
  return d;
}

NoiseFunctionals noise_functionals(const Eigen::MatrixXd& h_V,
                                   const Eigen::MatrixXd& h_A_effective,
                                   const PopulationProjection& proj,
                                   const GroundTruth& gt) {
  NoiseFunctionals f;
  const auto& mu = gt.mu();
  f.hV_dot_P = mu_inner(h_V, gt.P(), mu);
  f.hA_dot_Q = mu_inner(h_A_effective, gt.Qmat(), mu);
  f.hV_dot_DeltaV = mu_inner(h_V, proj.Delta_V, mu);
  f.hA_dot_DeltaA = mu_inner(h_A_effective, proj.Delta_A, mu);
  f.hV_musq = mu_norm_sq(h_V, mu);
  f.hA_musq = mu_norm_sq(h_A_effective, mu);
  return f;
}

ReducedNoiseScales default_noise_scales(const ReducedConsts& c, NoiseMode mode,
                                        double sigma_scale) {
  // Calibrated against minibatch noise measured at N in {3,5,10},
  // T in {100,300,1000}: B Var<h_A,Q>_mu ~ 0.035/N, B Var<h_V,P>_mu ~ 0.04/N,
  // B E|h_A|^2_mu ~ 0.07 T, B E|h_V|^2_mu ~ 0.015 N^2. The l1 proximal step
  // confines the attention noise to the Q-sparse support, trading the T
  // factor for Q.
  const double N = c.N;
  ReducedNoiseScales s;
  s.dir_A = sigma_scale * std::sqrt(0.035 / N);
  s.dir_V = sigma_scale * std::sqrt(0.04 / N);
  const double effective_len =
      (mode == NoiseMode::sgd) ? c.T : static_cast<double>(c.Q);
  s.norm_A_sq = sigma_scale * sigma_scale * 0.07 * effective_len;
  s.norm_V_sq = sigma_scale * sigma_scale * 0.015 * N * N;
  return s;
}

std::vector<ReducedRow> reduced_noise_simulate(const ReducedConsts& consts,
                                               const ReducedConfig& cfg,
                                               std::uint64_t seed) {
  ReducedNoiseScales scales = cfg.scales;
  if (scales.dir_A == 0.0 && scales.dir_V == 0.0 && scales.norm_A_sq == 0.0 &&
      scales.norm_V_sq == 0.0)
    scales = default_noise_scales(consts, cfg.mode, cfg.sigma_scale);

  const double K_P = consts.K_P, K_Q = consts.K_Q;
  TaskConstants tc{K_P, K_Q};
  const double eta_V = cfg.eta / K_Q;
  const double eta_A = cfg.eta / K_P;
  const double inv_sqrt_B = 1.0 / std::sqrt(static_cast<double>(cfg.B));

  ProjectionState st;  // alpha = 0, Delta = 0 scratch start
  Rng rng(seed, "noise");
  std::vector<ReducedRow> rows;
  rows.reserve(cfg.steps / std::max(1, cfg.log_every) + 2);

  auto log_state = [&](long step) {
    ReducedState rs;
    rs.alpha_V = st.alpha_V;
    rs.alpha_A = st.alpha_A;
    rs.delta_A_sq = st.delta_A_mu_sq / K_Q;
    rs.delta_V_sq = st.delta_V_mu_sq / K_P;
    rows.push_back({step, rs});
  };

  // Per-unit-direction noise derived from the target-direction scale.
  const double unit_dir_A = scales.dir_A / std::sqrt(K_Q);
  const double unit_dir_V = scales.dir_V / std::sqrt(K_P);

  log_state(0);
  for (long step = 0; step < cfg.steps; ++step) {
    NoiseFunctionals nf;
    nf.hV_dot_P = scales.dir_V * inv_sqrt_B * rng.normal();
    nf.hA_dot_Q = scales.dir_A * inv_sqrt_B * rng.normal();
    nf.hV_dot_DeltaV = unit_dir_V * std::sqrt(st.delta_V_mu_sq) *
                       inv_sqrt_B * rng.normal();
    nf.hA_dot_DeltaA = unit_dir_A * std::sqrt(st.delta_A_mu_sq) *
                       inv_sqrt_B * rng.normal();
    nf.hV_musq = scales.norm_V_sq * inv_sqrt_B * inv_sqrt_B;
    nf.hA_musq = scales.norm_A_sq * inv_sqrt_B * inv_sqrt_B;

    st = projection_dynamics_step(st, nf, eta_V, eta_A, tc,
                                  static_cast<double>(consts.T));
    // Keep the scalar system finite when the SGD-mode error blows up.
    st.delta_A_mu_sq = std::clamp(st.delta_A_mu_sq, 0.0, 1e8);
    st.delta_V_mu_sq = std::clamp(st.delta_V_mu_sq, 0.0, 1e8);
    st.alpha_V = std::clamp(st.alpha_V, -1e4, 1e4);
    st.alpha_A = std::clamp(st.alpha_A, -1e4, 1e4);
    if ((step + 1) % std::max(1, cfg.log_every) == 0 || step + 1 == cfg.steps)
      log_state(step + 1);
  }
  return rows;
}

}  // namespace scb
