#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "scb/data.hpp"
#include "scb/error.hpp"
#include "scb/geometry.hpp"
#include "scb/model.hpp"
#include "scb/population.hpp"

using namespace scb;

namespace {

Eigen::MatrixXd one_hot_matrix(const std::vector<std::int32_t>& x, int N) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, x.size());
  for (std::size_t t = 0; t < x.size(); ++t) X(x[t], t) = 1.0;
  return X;
}

Sample random_sample(const GroundTruth& gt, std::uint64_t idx) {
  Rng rng(1234, "data", idx);
  return sample_instance(gt, rng);
}

}  // namespace

TEST_CASE("forward with identity V and point attention picks a token") {
  const int T = 7, N = 3;
  ModelParams p;
  p.V = Eigen::MatrixXd::Identity(N, N);
  p.A = Eigen::MatrixXd::Zero(T, N);
  for (int k = 0; k < N; ++k) p.A(0, k) = 1.0;  // a^(k) = e_1
  std::vector<std::int32_t> x{2, 0, 1, 1, 2, 0, 1};
  for (int k = 0; k < N; ++k) {
    Eigen::VectorXd out = forward(p, x, k);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(N);
    expect[x[0]] = 1.0;
    CHECK((out - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("forward at the ground-truth parameters is the label law") {
  Dims d{30, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 3);
  ModelParams p{gt.P(), gt.Qmat()};
  for (int rep = 0; rep < 5; ++rep) {
    Sample s = random_sample(gt, rep);
    Eigen::VectorXd out = forward(p, s.x, s.x_last);
    Eigen::VectorXd law = label_distribution(gt, s.x, s.x_last);
    CHECK((out - law).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("forward matches the dense matrix-product oracle") {
  Dims d{40, 4, 3, 2.0};
  GroundTruth gt = gen_ground_truth(d, 4);
  Rng rng(5, "test");
  ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);
  for (int rep = 0; rep < 5; ++rep) {
    Sample s = random_sample(gt, 10 + rep);
    Eigen::MatrixXd X = one_hot_matrix(s.x, d.N);
    Eigen::VectorXd dense = p.V * X * p.A.col(s.x_last);
    CHECK((forward(p, s.x, s.x_last) - dense).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("per-sample loss at an exact prediction is zero, at zero is half") {
  const int T = 5, N = 3;
  ModelParams p;
  p.V = Eigen::MatrixXd::Identity(N, N);
  p.A = Eigen::MatrixXd::Zero(T, N);
  for (int k = 0; k < N; ++k) p.A(0, k) = 1.0;
  Sample s;
  s.x = {1, 2, 0, 0, 1};
  s.x_last = 0;
  s.x_out = 1;  // equals x[0], so the prediction is exactly e_{x_out}
  CHECK(per_sample_loss(p, s) == 0.0);

  p.V.setZero();  // zero prediction vector
  CHECK(per_sample_loss(p, s) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gradients vanish at a perfectly predicted sample") {
  const int T = 5, N = 3;
  ModelParams p;
  p.V = Eigen::MatrixXd::Identity(N, N);
  p.A = Eigen::MatrixXd::Zero(T, N);
  for (int k = 0; k < N; ++k) p.A(0, k) = 1.0;
  Sample s;
  s.x = {2, 0, 1, 1, 0};
  s.x_last = 1;
  s.x_out = 2;
  REQUIRE(per_sample_loss(p, s) == 0.0);
  SampleGrad g = grad_pair(p, s);
  CHECK(g.gV.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.gA_col.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.col == s.x_last);
}

TEST_CASE("gradients match central finite differences") {
  Dims d{12, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 9);
  Rng rng(6, "test");
  ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);
  const double h = 1e-5;

  for (int rep = 0; rep < 4; ++rep) {
    Sample s = random_sample(gt, 20 + rep);
    SampleGrad g = grad_pair(p, s);
    for (int dir = 0; dir < 25; ++dir) {
      Eigen::MatrixXd dV = Eigen::MatrixXd::NullaryExpr(
          d.N, d.N, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); });
      Eigen::VectorXd dA = Eigen::VectorXd::NullaryExpr(
          d.T, [&](Eigen::Index) { return rng.uniform(-1, 1); });
      ModelParams up = p, dn = p;
      up.V += h * dV;
      up.A.col(s.x_last) += h * dA;
      dn.V -= h * dV;
      dn.A.col(s.x_last) -= h * dA;
      const double fd =
          (per_sample_loss(up, s) - per_sample_loss(dn, s)) / (2 * h);
      const double analytic =
          (g.gV.array() * dV.array()).sum() + g.gA_col.dot(dA);
      CHECK(std::abs(fd - analytic) <=
            1e-5 * std::max(1.0, std::abs(analytic)));
    }
  }
}

TEST_CASE("residual mean vanishes at the ground truth over resampled outputs") {
  Dims d{6, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 14);
  ModelParams p{gt.P(), gt.Qmat()};
  // Fix the context, resample x_out from the true law; the residual
  // prediction - e_{x_out} averages to zero.
  std::vector<std::int32_t> x{0, 1, 2, 2, 0, 1};
  const int k = 2;
  Eigen::VectorXd law = label_distribution(gt, x, k);
  Eigen::VectorXd pred = forward(p, x, k);
  const int trials = 40000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d.N);
  for (int i = 0; i < trials; ++i) {
    Rng rng(44, "resample", i);
    Eigen::VectorXd r = pred;
    r[rng.categorical(law)] -= 1.0;
    mean += r;
  }
  mean /= trials;
  for (int n = 0; n < d.N; ++n) {
    const double sigma = std::sqrt(law[n] * (1 - law[n]) / trials);
    CHECK(std::abs(mean[n]) <= 4.0 * sigma + 1e-12);
  }
}

TEST_CASE("precondition matches the dense projector oracle") {
  Dims d{15, 4, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 16);
  const auto& mu = gt.mu();
  const int N = d.N;
  Rng rng(8, "test");

  const Eigen::MatrixXd left =
      Eigen::MatrixXd::Identity(N, N) -
      Eigen::MatrixXd::Constant(N, N, 1.0 / N);
  const Eigen::MatrixXd right =
      Eigen::MatrixXd::Identity(N, N) - mu * mu.transpose() / mu.squaredNorm();
  const Eigen::MatrixXd center_T =
      Eigen::MatrixXd::Identity(d.T, d.T) -
      Eigen::MatrixXd::Constant(d.T, d.T, 1.0 / d.T);

  for (int rep = 0; rep < 10; ++rep) {
    GradPair g;
    g.gV = Eigen::MatrixXd::NullaryExpr(
        N, N, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); });
    g.gA = Eigen::MatrixXd::NullaryExpr(
        d.T, N, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-1, 1); });
    GradPair pre = precondition(g, mu);

    Eigen::MatrixXd oracleV =
        left * g.gV * mu.cwiseInverse().asDiagonal() * right;
    CHECK((pre.gV - oracleV).cwiseAbs().maxCoeff() <= 1e-13);
    for (int k = 0; k < N; ++k) {
      Eigen::VectorXd oracleA = center_T * g.gA.col(k) / mu[k];
      CHECK((pre.gA.col(k) - oracleA).cwiseAbs().maxCoeff() <= 1e-13);
    }
    // Constraint-tangency: column sums and the mu direction vanish.
    CHECK(pre.gV.colwise().sum().cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((pre.gV * mu).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(pre.gA.colwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("precondition kills constant attention-gradient columns") {
  Dims d{10, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 17);
  GradPair g;
  g.gV = Eigen::MatrixXd::Zero(d.N, d.N);
  g.gA = Eigen::MatrixXd::Zero(d.T, d.N);
  g.gA.col(1).setConstant(3.7);
  GradPair pre = precondition(g, gt.mu());
  CHECK(pre.gA.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("precondition rejects nonpositive mu") {
  Eigen::VectorXd mu(2);
  mu << 1.0, 0.0;
  GradPair g{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 2)};
  CHECK_THROWS_AS(precondition(g, mu), ValidationError);
}

TEST_CASE("expected preconditioned gradients at scratch init") {
  Dims d{60, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 19);
  ModelParams p = ModelParams::scratch_init(gt);
  ExpectedGrads eg = expected_grads(p, gt);

  // The A-gradient vanishes at the uniform start; the V-gradient points
  // along -(1/T)(P - mu 1^T).
  CHECK(eg.preconditioned.gA.cwiseAbs().maxCoeff() <= 1e-13);
  const Eigen::MatrixXd target =
      -(gt.P() - gt.mu() * Eigen::RowVectorXd::Ones(d.N)) / d.T;
  CHECK((eg.preconditioned.gV - target).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("monte-carlo batch gradients approach the closed forms") {
  Dims d{8, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 23);
  Rng rng(31, "test");
  ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);

  const int B = 10000;
  std::vector<Sample> batch = sample_batch(gt, B, 77, 0);
  BatchGrads g = batch_grads(p, batch, gt.mu());
  ExpectedGrads eg = expected_grads(p, gt);

  // Empirical per-entry std of the raw V-gradient sets the CLT band.
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d.N, d.N);
  for (const Sample& s : batch) {
    SampleGrad sg = grad_pair(p, s);
    second += sg.gV.cwiseProduct(sg.gV);
  }
  second /= B;
  const Eigen::MatrixXd var = second - g.raw.gV.cwiseProduct(g.raw.gV);
  for (int i = 0; i < d.N; ++i)
    for (int j = 0; j < d.N; ++j) {
      const double sigma = std::sqrt(std::max(var(i, j), 0.0) / B);
      CHECK(std::abs(g.raw.gV(i, j) - eg.raw.gV(i, j)) <= 4.0 * sigma + 1e-3);
    }
  CHECK((g.preconditioned.gA - eg.preconditioned.gA).cwiseAbs().maxCoeff() <=
        0.5);
}

TEST_CASE("batch of identical samples equals the single-sample gradient") {
  Dims d{10, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 25);
  Rng rng(32, "test");
  ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);
  Sample s = random_sample(gt, 0);
  std::vector<Sample> batch(8, s);
  GradPair g = batch_grads_raw(p, batch);
  SampleGrad single = grad_pair(p, s);
  CHECK((g.gV - single.gV).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((g.gA.col(s.x_last) - single.gA_col).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("batch gradient is permutation-insensitive to rounding level") {
  Dims d{20, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 26);
  Rng rng(33, "test");
  ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);
  std::vector<Sample> batch = sample_batch(gt, 37, 5, 0);
  GradPair a = batch_grads_raw(p, batch);
  std::reverse(batch.begin(), batch.end());
  GradPair b = batch_grads_raw(p, batch);
  CHECK((a.gV - b.gV).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.gA - b.gA).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(batch_grads_raw(p, {}), ValidationError);
}

TEST_CASE("constraint preservation under preconditioned steps") {
  Dims d{15, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 27);
  Rng rng(34, "test");
  for (int trial = 0; trial < 200; ++trial) {
    ModelParams p = random_feasible_params(d.N, d.T, gt.mu(), rng);
    Sample s = random_sample(gt, trial);
    SampleGrad sg = grad_pair(p, s);
    GradPair dense{sg.gV, Eigen::MatrixXd::Zero(d.T, d.N)};
    dense.gA.col(sg.col) = sg.gA_col;
    GradPair pre = precondition(dense, gt.mu());
    const double eta = rng.uniform(0.0, 0.3);
    p.V -= eta * pre.gV;
    p.A -= eta * pre.gA;
    CHECK(p.max_constraint_violation(gt.mu()) <= 1e-9);
  }
}

TEST_CASE("softmax with constant logits equals the uniform linear model") {
  Dims d{12, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 28);
  SoftmaxModel soft;
  soft.V = gt.P();
  soft.w = Eigen::VectorXd::Constant(d.T, 2.5);
  ModelParams linear{gt.P(), Eigen::MatrixXd::Constant(d.T, d.N, 1.0 / d.T)};
  Sample s = random_sample(gt, 3);
  const Eigen::VectorXd a = softmax_attention(soft.w);
  CHECK((a.array() - 1.0 / d.T).abs().maxCoeff() <= 1e-15);
  CHECK((softmax_forward(soft, s.x) - forward(linear, s.x, s.x_last))
            .cwiseAbs()
            .maxCoeff() <= 1e-14);
}

TEST_CASE("softmax logit gradient matches finite differences") {
  Dims d{9, 3, 2, 2.0};
  GroundTruth gt = gen_ground_truth(d, 29);
  Rng rng(35, "test");
  SoftmaxModel soft;
  soft.V = random_feasible_params(d.N, d.T, gt.mu(), rng).V;
  soft.w = Eigen::VectorXd::NullaryExpr(
      d.T, [&](Eigen::Index) { return rng.uniform(-1, 1); });
  Sample s = random_sample(gt, 4);
  Eigen::VectorXd g = softmax_grad_w(soft, s);
  const double h = 1e-6;
  for (int dir = 0; dir < 20; ++dir) {
    Eigen::VectorXd dw = Eigen::VectorXd::NullaryExpr(
        d.T, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    SoftmaxModel up = soft, dn = soft;
    up.w += h * dw;
    dn.w -= h * dw;
    const double fd = (softmax_loss(up, s) - softmax_loss(dn, s)) / (2 * h);
    CHECK(std::abs(fd - g.dot(dw)) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("near-uniform softmax jacobian approximates the scaled centerer") {
  const int T = 100;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(T);
  Rng rng(36, "test");
  for (int t = 0; t < T; ++t) w[t] = 1e-3 * rng.uniform(-1, 1);
  const Eigen::VectorXd a = softmax_attention(w);
  Eigen::MatrixXd jac = Eigen::MatrixXd(a.asDiagonal()) - a * a.transpose();
  Eigen::MatrixXd centerer =
      (Eigen::MatrixXd::Identity(T, T) -
       Eigen::MatrixXd::Constant(T, T, 1.0 / T)) /
      T;
  CHECK((jac - centerer).cwiseAbs().maxCoeff() <= 10.0 / (T * T));
}
