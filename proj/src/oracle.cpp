#include "scb/oracle.hpp"

#include <cmath>

#include "scb/error.hpp"
#include "scb/geometry.hpp"
#include "scb/population.hpp"

namespace scb {

namespace {

void check_budget(const GroundTruth& gt, const EnumBudget& budget) {
  const double N = gt.dims().N;
  double total = N;  // x_o
  for (int i = 0; i < gt.dims().T + 1; ++i) {
    total *= N;
    if (total > static_cast<double>(budget.max_outcomes))
      throw BudgetError("oracle: N^(T+1) * N exceeds max_outcomes");
  }
}

// Conditional P(x_o | x_{T+1} = k, x) by walking the two-step process.
double two_step_conditional(const GroundTruth& gt,
                            const std::vector<std::int32_t>& x, int k,
                            int x_o) {
  double p = 0.0;
  for (int t : gt.support(k)) p += gt.Qmat()(t, k) * gt.P()(x_o, x[t]);
  return p;
}

template <typename Fn>
void for_each_sequence(int N, int T, Fn&& fn) {
  std::vector<std::int32_t> x(T, 0);
  for (;;) {
    fn(x);
    int pos = 0;
    while (pos < T) {
      if (++x[pos] < N) break;
      x[pos] = 0;
      ++pos;
    }
    if (pos == T) return;
  }
}

}  // namespace

void enumerate_outcomes(
    const GroundTruth& gt, const EnumBudget& budget,
    const std::function<void(const std::vector<std::int32_t>& x, int k,
                             int x_o, double p)>& visit) {
  check_budget(gt, budget);
  const int N = gt.dims().N, T = gt.dims().T;
  for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
    double px = 1.0;
    for (int t = 0; t < T; ++t) px *= gt.mu()[x[t]];
    for (int k = 0; k < N; ++k) {
      const double pxk = px * gt.mu()[k];
      for (int x_o = 0; x_o < N; ++x_o)
        visit(x, k, x_o, pxk * two_step_conditional(gt, x, k, x_o));
    }
  });
}

double enumerated_total_probability(const GroundTruth& gt,
                                    const EnumBudget& budget) {
  double total = 0.0;
  enumerate_outcomes(gt, budget,
                     [&](const std::vector<std::int32_t>&, int, int,
                         double p) { total += p; });
  return total;
}

ValuePair exact_joint_prob(const GroundTruth& gt, int n, int m, int t, int k,
                           const EnumBudget& budget) {
  check_budget(gt, budget);
  const int N = gt.dims().N, T = gt.dims().T;
  double enumerated = 0.0;
  for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
    if (x[t] != m) return;
    double px = 1.0;
    for (int i = 0; i < T; ++i) px *= gt.mu()[x[i]];
    enumerated += px * two_step_conditional(gt, x, k, n);
  });
  ValuePair out;
  out.enumerated = enumerated;
  const double q = gt.Qmat()(t, k);
  out.closed_form = q * gt.P()(n, m) * gt.mu()[m] +
                    (1.0 - q) * gt.mu()[n] * gt.mu()[m];
  return out;
}

ValuePair exact_cond_prob(const GroundTruth& gt, int n, int k, int s, int m,
                          int t, int l, const EnumBudget& budget) {
  if (s == t) throw ValidationError("exact_cond_prob: s and t must differ");
  check_budget(gt, budget);
  const int N = gt.dims().N, T = gt.dims().T;
  double joint = 0.0;
  for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
    if (x[s] != m || x[t] != l) return;
    double px = 1.0;
    for (int i = 0; i < T; ++i) px *= gt.mu()[x[i]];
    joint += px * two_step_conditional(gt, x, k, n);
  });
  ValuePair out;
  out.enumerated = joint / (gt.mu()[m] * gt.mu()[l]);
  const double qs = gt.Qmat()(s, k), qt = gt.Qmat()(t, k);
  out.closed_form =
      qs * gt.P()(n, m) + qt * gt.P()(n, l) + (1.0 - qs - qt) * gt.mu()[n];
  return out;
}

ExpectedGradsOracle oracle_expected_grads(const GroundTruth& gt,
                                          const ModelParams& params,
                                          const EnumBudget& budget) {
  check_budget(gt, budget);
  const int N = gt.dims().N, T = gt.dims().T;
  ExpectedGradsOracle out;
  out.raw.gV = Eigen::MatrixXd::Zero(N, N);
  out.raw.gA = Eigen::MatrixXd::Zero(T, N);
  out.preconditioned.gV = Eigen::MatrixXd::Zero(N, N);
  out.preconditioned.gA = Eigen::MatrixXd::Zero(T, N);
  Sample sample;
  enumerate_outcomes(gt, budget,
                     [&](const std::vector<std::int32_t>& x, int k, int x_o,
                         double p) {
                       if (p == 0.0) return;
                       sample.x = x;
                       sample.x_last = k;
                       sample.x_out = x_o;
                       SampleGrad g = grad_pair(params, sample);
                       out.raw.gV += p * g.gV;
                       out.raw.gA.col(k) += p * g.gA_col;
                       GradPair dense;
                       dense.gV = g.gV;
                       dense.gA = Eigen::MatrixXd::Zero(T, N);
                       dense.gA.col(k) = g.gA_col;
                       GradPair pre = precondition(dense, gt.mu());
                       out.preconditioned.gV += p * pre.gV;
                       out.preconditioned.gA += p * pre.gA;
                     });
  return out;
}

double MomentReport::worst() const {
  double w = 0.0;
  for (const auto& [_, v] : max_abs_diff) w = std::max(w, v);
  return w;
}

MomentReport exact_moment_checks(const GroundTruth& gt,
                                 const ModelParams& params,
                                 const EnumBudget& budget) {
  check_budget(gt, budget);
  const int N = gt.dims().N, T = gt.dims().T;
  const auto& mu = gt.mu();
  MomentReport report;

  // Joint law of (x_o, x_t) given the query token.
  double worst = 0.0;
  for (int k = 0; k < N; ++k)
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < N; ++m)
          worst = std::max(worst, exact_joint_prob(gt, n, m, t, k, budget).diff());
  report.max_abs_diff["joint_prob"] = worst;

  // Conditional law given two revealed positions.
  worst = 0.0;
  for (int k = 0; k < N; ++k)
    for (int s = 0; s < T; ++s)
      for (int t = 0; t < T; ++t) {
        if (s == t) continue;
        for (int n = 0; n < N; ++n)
          for (int m = 0; m < N; ++m)
            for (int l = 0; l < N; ++l)
              worst = std::max(
                  worst, exact_cond_prob(gt, n, k, s, m, t, l, budget).diff());
      }
  report.max_abs_diff["cond_prob"] = worst;

  // Per-sample gradient formula vs central finite differences of the loss.
  {
    Sample s;
    s.x.resize(T);
    for (int t = 0; t < T; ++t) s.x[t] = t % N;
    s.x_last = 0;
    s.x_out = N - 1;
    SampleGrad g = grad_pair(params, s);
    const double h = 1e-4;  // loss is quadratic per coordinate: no truncation error
    double fd_worst = 0.0;
    ModelParams probe = params;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        probe.V(i, j) = params.V(i, j) + h;
        const double up = per_sample_loss(probe, s);
        probe.V(i, j) = params.V(i, j) - h;
        const double dn = per_sample_loss(probe, s);
        probe.V(i, j) = params.V(i, j);
        fd_worst = std::max(fd_worst,
                            std::abs((up - dn) / (2 * h) - g.gV(i, j)));
      }
    for (int t = 0; t < T; ++t) {
      probe.A(t, s.x_last) = params.A(t, s.x_last) + h;
      const double up = per_sample_loss(probe, s);
      probe.A(t, s.x_last) = params.A(t, s.x_last) - h;
      const double dn = per_sample_loss(probe, s);
      probe.A(t, s.x_last) = params.A(t, s.x_last);
      fd_worst =
          std::max(fd_worst, std::abs((up - dn) / (2 * h) - g.gA_col[t]));
    }
    report.max_abs_diff["gradient_formula"] = fd_worst;
  }

  // E[e_{x_s} e_{x_t}^T]: diag(mu) on the diagonal pairs, mu mu^T otherwise.
  worst = 0.0;
  for (int s = 0; s < T; ++s)
    for (int t = 0; t < T; ++t) {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(N, N);
      double seen = 0.0;
      for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
        double px = 1.0;
        for (int i = 0; i < T; ++i) px *= mu[x[i]];
        acc(x[s], x[t]) += px;
        seen += px;
      });
      (void)seen;
      Eigen::MatrixXd expect = (s == t)
                                   ? Eigen::MatrixXd(mu.asDiagonal())
                                   : Eigen::MatrixXd(mu * mu.transpose());
      worst = std::max(worst, (acc - expect).cwiseAbs().maxCoeff());
    }
  report.max_abs_diff["token_second_moment"] = worst;

  // sum_n E[V_{n,x_s} V_{n,x_t}]: |V|_mu^2 or |mu|^2.
  worst = 0.0;
  for (int s = 0; s < T; ++s)
    for (int t = 0; t < T; ++t) {
      double acc = 0.0;
      for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
        double px = 1.0;
        for (int i = 0; i < T; ++i) px *= mu[x[i]];
        acc += px * params.V.col(x[s]).dot(params.V.col(x[t]));
      });
      const double expect = (s == t) ? mu_norm_sq(params.V, mu)
                                     : mu.squaredNorm();
      worst = std::max(worst, std::abs(acc - expect));
    }
  report.max_abs_diff["value_second_moment"] = worst;

  // E^(k)[V_{x_o, x_t}].
  worst = 0.0;
  const double VP_mu = mu_inner(params.V, gt.P(), mu);
  for (int k = 0; k < N; ++k)
    for (int t = 0; t < T; ++t) {
      double acc = 0.0;
      for_each_sequence(N, T, [&](const std::vector<std::int32_t>& x) {
        double px = 1.0;
        for (int i = 0; i < T; ++i) px *= mu[x[i]];
        for (int x_o = 0; x_o < N; ++x_o)
          acc += px * two_step_conditional(gt, x, k, x_o) *
                 params.V(x_o, x[t]);
      });
      const double q = gt.Qmat()(t, k);
      const double expect =
          q * VP_mu + (1.0 - q) * mu.squaredNorm();
      worst = std::max(worst, std::abs(acc - expect));
    }
  report.max_abs_diff["output_value_moment"] = worst;

  // Expected gradients, plain and preconditioned.
  ExpectedGradsOracle enumerated = oracle_expected_grads(gt, params, budget);
  ExpectedGrads closed = expected_grads(params, gt);
  report.max_abs_diff["expected_gradients"] = std::max(
      (enumerated.raw.gV - closed.raw.gV).cwiseAbs().maxCoeff(),
      (enumerated.raw.gA - closed.raw.gA).cwiseAbs().maxCoeff());
  report.max_abs_diff["expected_preconditioned_gradients"] = std::max(
      (enumerated.preconditioned.gV - closed.preconditioned.gV)
          .cwiseAbs()
          .maxCoeff(),
      (enumerated.preconditioned.gA - closed.preconditioned.gA)
          .cwiseAbs()
          .maxCoeff());
  return report;
}

void require_agreement(const MomentReport& report, double tol) {
  for (const auto& [name, diff] : report.max_abs_diff)
    if (diff > tol)
      throw FormulaMismatchError("oracle: " + name + " differs by " +
                                 std::to_string(diff) + " > tolerance");
}

}  // namespace scb
