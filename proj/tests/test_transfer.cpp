#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/geometry.hpp"
#include "scb/population.hpp"
#include "scb/transfer.hpp"

using namespace scb;

namespace {

Schedule finishing_schedule(const TaskConstants& consts, long s2, long s3,
                            double eta, double lambda, int batch) {
  Schedule s;
  s.stage1 = make_stage(eta, 0.0, batch, StopRule{0L, {}, 1000000}, consts);
  s.stage2 = make_stage(eta, lambda, batch, StopRule{s2, {}, 1000000}, consts);
  s.stage3 = make_stage(eta, 0.0, batch, StopRule{s3, {}, 1000000}, consts);
  s.stage3.eta_A = 0.0;
  return s;
}

}  // namespace

TEST_CASE("gen_pretrained with gamma = 1 returns the downstream transition") {
  Dims d{50, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 1);
  Rng rng(2, "pretrain");
  PretrainedTask task = gen_pretrained(gt, 1.0, rng);
  CHECK((task.P_hat - gt.P()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("line-kind pretraining: correlation equals gamma K_P") {
  Dims d{50, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 3);
  const TaskConstants consts = gt.constants();
  const double mu_sq = gt.mu().squaredNorm();
  // Feasibility threshold: gamma K_P >= |mu|^2.
  const double gamma_min = mu_sq / consts.K_P;

  Rng rng(4, "pretrain");
  const double gamma_ok = std::min(1.0, 1.2 * gamma_min);
  PretrainedTask task = gen_pretrained(gt, gamma_ok, rng, PretrainKind::line);
  const double corr = mu_inner(task.P_hat, gt.P(), gt.mu()) - mu_sq;
  CHECK(corr == doctest::Approx(gamma_ok * consts.K_P).epsilon(1e-12));

  if (0.8 * gamma_min > 0.0 && 0.8 * gamma_min < 1.0) {
    CHECK_THROWS_AS(
        gen_pretrained(gt, 0.8 * gamma_min, rng, PretrainKind::line),
        TransferError);
  }
}

TEST_CASE("metropolis chain fixes the stationary distribution") {
  Dims d{20, 4, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 5);
  Rng rng(6, "pretrain");
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd R = metropolis_chain(gt.mu(), rng);
    for (int k = 0; k < d.N; ++k) {
      CHECK(R.col(k).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(R.col(k).minCoeff() >= -1e-15);
    }
    CHECK((R * gt.mu() - gt.mu()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("init_transfer: on-line pretraining lands exactly on the line") {
  Dims d{80, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 7);

  // P_hat = P: alpha_V = theta exactly, Delta_V = 0.
  PretrainedTask exact{gt.P()};
  ModelParams p = init_transfer(exact, gt, 0.3);
  CHECK(p.satisfies_constraints(gt.mu(), 1e-12));
  PopulationProjection proj = project(p, gt);
  CHECK(proj.alpha_V == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(proj.delta_V_mu_sq <= 1e-24);
  CHECK(proj.alpha_A == doctest::Approx(0.0).epsilon(1e-12));

  // P_hat = gamma P + (1-gamma) mu 1^T: alpha_V = theta gamma, still on-line.
  Rng rng(8, "pretrain");
  const TaskConstants consts = gt.constants();
  const double gamma =
      std::min(1.0, 1.02 * gt.mu().squaredNorm() / consts.K_P);
  PretrainedTask line = gen_pretrained(gt, gamma, rng, PretrainKind::line);
  PopulationProjection proj2 = project(init_transfer(line, gt, 0.4), gt);
  CHECK(proj2.alpha_V == doctest::Approx(0.4 * gamma).epsilon(1e-12));
  CHECK(proj2.delta_V_mu_sq <= 1e-24);

  // theta -> 0 limit approaches the scratch initialization.
  PopulationProjection proj3 = project(init_transfer(exact, gt, 1e-9), gt);
  CHECK(std::abs(proj3.alpha_V) <= 1e-8);
}

TEST_CASE("init_transfer satisfies the initialization bounds off the line") {
  Dims d{60, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 9);
  const TaskConstants consts = gt.constants();
  Rng rng(10, "pretrain");
  const double theta = 0.35;
  for (int rep = 0; rep < 5; ++rep) {
    PretrainedTask task;
    try {
      task = gen_pretrained(gt, 0.95, rng, PretrainKind::metropolis);
    } catch (const TransferError&) {
      continue;  // correlation can fail for unlucky proposals
    }
    ModelParams p = init_transfer(task, gt, theta);
    CHECK(p.satisfies_constraints(gt.mu(), 1e-12));
    PopulationProjection proj = project(p, gt);
    // alpha_V in [Theta(theta/(N K_P)), Theta(theta)] with C^2 slack on the
    // lower constant, and |Delta_V|^2 <= Theta(1) theta^2 K_P.
    const double C2 = d.C * d.C;
    CHECK(proj.alpha_V >=
          theta / (C2 * d.N * consts.K_P) - 1e-12);
    CHECK(proj.alpha_V <= 4.0 * theta);
    CHECK(proj.delta_V_mu_sq <= 4.0 * theta * theta * consts.K_P);
  }
}

TEST_CASE("init_transfer rejects theta outside (0, 1)") {
  Dims d{20, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 11);
  PretrainedTask task{gt.P()};
  CHECK_THROWS_AS(init_transfer(task, gt, 0.0), ValidationError);
  CHECK_THROWS_AS(init_transfer(task, gt, 1.0), ValidationError);
}

TEST_CASE("first step with population gradient aligns the signals") {
  Dims d{500, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 12);
  TransferConfig cfg;
  cfg.theta = 0.3;
  cfg.gamma = 1.0;

  TrainState state;
  state.params = init_transfer(PretrainedTask{gt.P()}, gt, cfg.theta);
  transfer_first_step(state, gt, cfg, GradSource::population);
  PopulationProjection proj = project(state.params, gt);
  CHECK(std::abs(proj.alpha_A / proj.alpha_V - 1.0) <=
        20.0 * d.Q / static_cast<double>(d.T));
  // The first step recovers the exact attention support.
  for (int k = 0; k < d.N; ++k) {
    const double floor = 2.0 / d.T;
    for (int t = 0; t < d.T; ++t) {
      const bool on = gt.Qmat()(t, k) != 0.0;
      if (on)
        CHECK(state.params.A(t, k) > floor);
      else
        CHECK(state.params.A(t, k) <= floor);
    }
  }
}

TEST_CASE("an oversized threshold collapses the attention and is reported") {
  Dims d{200, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 13);
  TransferConfig cfg;
  cfg.theta = 0.3;
  cfg.threshold_const = 5.0;  // above every entry the first step can produce

  TrainState state;
  state.params = init_transfer(PretrainedTask{gt.P()}, gt, cfg.theta);
  CHECK_THROWS_AS(transfer_first_step(state, gt, cfg, GradSource::population),
                  TransferError);
  // Everything was removed: columns returned to uniform.
  CHECK((state.params.A.array() - 1.0 / d.T).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("undersized first-step batch raises rather than degrades") {
  // A strict accuracy target with a tiny batch cannot land the signal
  // ratio inside [1 - 5 eps, 1 + 5 eps]; the step must say so.
  Dims d{300, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 14);
  TransferConfig cfg;
  cfg.theta = 0.01;
  cfg.eps_tmp = 0.01;
  cfg.first_step_batch = 4;
  int failures = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TrainState state;
    state.seed = seed;
    state.params = init_transfer(PretrainedTask{gt.P()}, gt, cfg.theta);
    try {
      transfer_first_step(state, gt, cfg, GradSource::minibatch);
    } catch (const TransferError&) {
      ++failures;
    }
  }
  CHECK(failures >= 7);
}

TEST_CASE("minibatch first step lands within ten percent over seeds") {
  Dims d{500, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 16);
  TransferConfig cfg;
  cfg.theta = 0.3;
  cfg.first_step_batch = 100000;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainState state;
    state.seed = seed;
    state.params = init_transfer(PretrainedTask{gt.P()}, gt, cfg.theta);
    transfer_first_step(state, gt, cfg, GradSource::minibatch);
    PopulationProjection proj = project(state.params, gt);
    CHECK(proj.alpha_A / proj.alpha_V >= 0.9);
    CHECK(proj.alpha_A / proj.alpha_V <= 1.1);
    CHECK(proj.delta_A_mu_sq <=
          cfg.eps_tmp * cfg.eps_tmp * proj.alpha_V * proj.alpha_V / d.Q +
              10.0 / d.T);
  }
}

TEST_CASE("transfer pipeline with population gradients recovers the task") {
  Dims d{400, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 17);
  const TaskConstants consts = gt.constants();
  TransferConfig cfg;
  cfg.theta = 0.5;
  RunOptions opts;
  opts.source = GradSource::population;
  opts.log_every = 200;
  Schedule schedule = finishing_schedule(consts, 0, 300, 0.05, 0.0, 1);
  schedule.stage2.stop = StopRule{{}, 0.98, 100000};
  TrainState st = run_transfer_pipeline(gt, PretrainedTask{gt.P()}, cfg,
                                        schedule, 1, opts);
  CHECK(mu_norm_sq(st.params.V - gt.P(), gt.mu()) <= 1e-4);
  CHECK(mu_norm_sq(st.params.A - gt.Qmat(), gt.mu()) <= 1e-4);
}

TEST_CASE("transfer pipeline succeeds with sequence-length-free batches") {
  Dims d{2000, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 18);
  const TaskConstants consts = gt.constants();
  TransferConfig cfg;
  cfg.theta = 0.4;
  cfg.first_step_batch = 5000;  // cap independent of T
  RunOptions opts;
  opts.log_every = 1000000;
  Schedule schedule = finishing_schedule(consts, 500, 200, 0.02, 5e-4, 256);
  TrainState st = run_transfer_pipeline(gt, PretrainedTask{gt.P()}, cfg,
                                        schedule, 2, opts);
  CHECK(mu_norm(st.params.V - gt.P(), gt.mu()) <= 0.15);
  CHECK(mu_norm(st.params.A - gt.Qmat(), gt.mu()) <= 0.15);
}

TEST_CASE("accuracy-driven theta choice runs the pipeline to target") {
  // theta = sqrt(c / log(1/eps)) with eps = 1e-2.
  const double eps = 1e-2;
  const double theta = std::sqrt(1.0 / std::log(1.0 / eps));
  Dims d{500, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 19);
  const TaskConstants consts = gt.constants();
  TransferConfig cfg;
  cfg.theta = std::min(0.9, theta);
  RunOptions opts;
  opts.source = GradSource::population;
  opts.log_every = 1000000;
  Schedule schedule = finishing_schedule(consts, 0, 400, 0.05, 0.0, 1);
  schedule.stage2.stop = StopRule{{}, 0.99, 100000};
  TrainState st = run_transfer_pipeline(gt, PretrainedTask{gt.P()}, cfg,
                                        schedule, 3, opts);
  CHECK(mu_norm_sq(st.params.V - gt.P(), gt.mu()) <= eps);
  CHECK(mu_norm_sq(st.params.A - gt.Qmat(), gt.mu()) <= eps);
}

TEST_CASE("transfer config validation and warnings") {
  Dims d{50, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 20);
  TransferConfig cfg;
  cfg.theta = 1.5;
  CHECK_THROWS_AS(cfg.validate(gt, nullptr), ValidationError);
  cfg.theta = 0.3;
  cfg.eps_tmp = 10.0;  // beyond 1/(N K_P)
  std::vector<std::string> warnings;
  cfg.validate(gt, &warnings);
  CHECK(!warnings.empty());
}
