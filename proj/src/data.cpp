#include "scb/data.hpp"

#include <cmath>
#include <sstream>

#include "scb/error.hpp"
#include "scb/geometry.hpp"

namespace scb {

TransitionCheck check_transition(const Eigen::MatrixXd& P,
                                 const Eigen::VectorXd& mu, double C) {
  const int N = static_cast<int>(mu.size());
  const double lo = 1.0 / (C * N), hi = C / N;
  for (int k = 0; k < N; ++k)
    if (mu[k] < lo || mu[k] > hi) return TransitionCheck::mu_out_of_range;
  const double K_P = mu_norm_sq(P, mu) - mu.squaredNorm();
  if (K_P < mu.squaredNorm()) return TransitionCheck::trivial_transition;
  return TransitionCheck::ok;
}

Eigen::VectorXd stationary_dist(const Eigen::MatrixXd& P, double tol,
                                int max_iters) {
  const Eigen::Index N = P.cols();
  if (P.rows() != N) throw DimensionError("stationary_dist: P must be square");
  for (Eigen::Index k = 0; k < N; ++k)
    if (std::abs(P.col(k).sum() - 1.0) > 1e-9 || P.col(k).minCoeff() < -1e-12)
      throw ValidationError("stationary_dist: P is not column-stochastic");

  auto iterate = [&](Eigen::VectorXd v) {
    for (int it = 0; it < max_iters; ++it) {
      Eigen::VectorXd next = P * v;
      next /= next.sum();
      if ((P * next - next).cwiseAbs().maxCoeff() <= tol) return next;
      v = std::move(next);
    }
    throw ConvergenceError("stationary_dist: power iteration did not converge "
                           "(reducible or periodic chain?)");
  };

  Eigen::VectorXd mu = iterate(Eigen::VectorXd::Constant(N, 1.0 / N));
  // Second start: a fixed point reached from elsewhere must coincide,
  // otherwise the stationary distribution is not unique.
  Eigen::VectorXd probe = Eigen::VectorXd::Zero(N);
  probe[0] = 0.75;
  probe.tail(N - 1).setConstant(0.25 / (N - 1));
  Eigen::VectorXd mu2 = iterate(probe);
  if ((mu - mu2).cwiseAbs().maxCoeff() > 100.0 * tol + 1e-10)
    throw ConvergenceError("stationary_dist: fixed point is not unique");
  return mu;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> gen_transition(int N, double C,
                                                           int max_tries,
                                                           std::uint64_t seed) {
  if (N < 2) throw ValidationError("gen_transition: N must be >= 2");
  if (!(C >= 1.0)) throw ValidationError("gen_transition: C must be >= 1");

  // Peaked symmetric chain: uniform stationary distribution, large K_P.
  Eigen::MatrixXd sym = Eigen::MatrixXd::Constant(N, N, 0.15 / N);
  sym.diagonal().array() += 0.85;

  Rng rng(seed, "ground-truth");
  int fail_mu = 0, fail_trivial = 0, fail_converge = 0;
  double mix = 0.0;
  const int bump_every = std::max(1, max_tries / 10);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    if (attempt > 0 && attempt % bump_every == 0) mix = std::min(0.9, mix + 0.1);
    Eigen::MatrixXd P(N, N);
    for (int k = 0; k < N; ++k) {
      for (int n = 0; n < N; ++n) P(n, k) = rng.exponential();  // Dirichlet(1)
      P.col(k) /= P.col(k).sum();
    }
    P = (1.0 - mix) * P + mix * sym;
    Eigen::VectorXd mu;
    try {
      mu = stationary_dist(P);
    } catch (const ConvergenceError&) {
      ++fail_converge;
      continue;
    }
    switch (check_transition(P, mu, C)) {
      case TransitionCheck::ok:
        return {P, mu};
      case TransitionCheck::mu_out_of_range:
        ++fail_mu;
        break;
      case TransitionCheck::trivial_transition:
        ++fail_trivial;
        break;
    }
  }
  std::ostringstream os;
  os << "gen_transition: exhausted " << max_tries << " tries (mu out of range: "
     << fail_mu << ", trivial transition: " << fail_trivial
     << ", non-convergent: " << fail_converge << "); dominant failure: "
     << (fail_mu >= fail_trivial ? "mu conditioning" : "nontrivial transition");
  throw GenerationError(os.str());
}

Eigen::MatrixXd gen_attention_targets(int T, int N, int Q, double C,
                                      std::uint64_t seed, int max_tries) {
  if (Q > T) throw ValidationError("gen_attention_targets: Q must be <= T");
  if (!(C >= 1.0))
    throw ValidationError("gen_attention_targets: C must be >= 1");

  const double lo = 1.0 / (C * Q), hi = C / Q;
  Eigen::MatrixXd Qmat = Eigen::MatrixXd::Zero(T, N);
  Rng rng(seed, "ground-truth-attention");
  for (int k = 0; k < N; ++k) {
    std::vector<int> pos = rng.sample_without_replacement(T, Q);
    Eigen::VectorXd vals(Q);
    bool ok = false;
    for (int attempt = 0; attempt < max_tries && !ok; ++attempt) {
      for (int j = 0; j < Q; ++j) vals[j] = rng.gamma(5.0);  // Dirichlet(5)
      vals /= vals.sum();
      ok = vals.minCoeff() >= lo && vals.maxCoeff() <= hi;
    }
    if (!ok)
      throw GenerationError("gen_attention_targets: could not satisfy the "
                            "well-conditioned value range for column " +
                            std::to_string(k));
    for (int j = 0; j < Q; ++j) Qmat(pos[j], k) = vals[j];
  }
  return Qmat;
}

GroundTruth gen_ground_truth(const Dims& dims, std::uint64_t seed,
                             int max_tries) {
  dims.validate();
  auto [P, mu] = gen_transition(dims.N, dims.C, max_tries, seed);
  Eigen::MatrixXd Qmat =
      gen_attention_targets(dims.T, dims.N, dims.Q, dims.C, seed, max_tries);
  return GroundTruth(dims, std::move(P), std::move(mu), std::move(Qmat));
}

GroundTruth gen_small_task(const Dims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng(seed, "small-task");
  const int N = dims.N;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Eigen::MatrixXd P(N, N);
    for (int k = 0; k < N; ++k) {
      for (int n = 0; n < N; ++n) P(n, k) = rng.exponential() + 1e-3;
      P.col(k) /= P.col(k).sum();
    }
    Eigen::VectorXd mu;
    try {
      mu = stationary_dist(P);
    } catch (const ConvergenceError&) {
      continue;
    }
    Eigen::MatrixXd Qmat = gen_attention_targets(
        dims.T, N, dims.Q, dims.C, seed + 7919 * (attempt + 1));
    return GroundTruth::unchecked(dims, std::move(P), std::move(mu),
                                  std::move(Qmat));
  }
  throw GenerationError("gen_small_task: no irreducible chain found");
}

Eigen::VectorXd label_distribution(const GroundTruth& gt,
                                   const std::vector<std::int32_t>& x, int k) {
  const int N = gt.dims().N;
  if (static_cast<int>(x.size()) != gt.dims().T)
    throw DimensionError("label_distribution: x must have length T");
  if (k < 0 || k >= N) throw DimensionError("label_distribution: k out of range");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(N);
  for (int t : gt.support(k)) p += gt.Qmat()(t, k) * gt.P().col(x[t]);
  return p;
}

Sample sample_instance(const GroundTruth& gt, Rng& rng) {
  const int T = gt.dims().T;
  Sample s;
  s.x.resize(T);
  for (int t = 0; t < T; ++t)
    s.x[t] = static_cast<std::int32_t>(rng.categorical(gt.mu()));
  s.x_last = static_cast<std::int32_t>(rng.categorical(gt.mu()));
  // Two-step generation: attended position first, then one Markov step.
  const auto& supp = gt.support(s.x_last);
  double u = rng.uniform();
  int pos = supp.empty() ? 0 : supp.back();
  double acc = 0.0;
  for (int t : supp) {
    acc += gt.Qmat()(t, s.x_last);
    if (u < acc) {
      pos = t;
      break;
    }
  }
  s.x_out = static_cast<std::int32_t>(rng.categorical(gt.P().col(s.x[pos])));
  return s;
}

std::vector<Sample> sample_batch(const GroundTruth& gt, int B,
                                 std::uint64_t seed,
                                 std::uint64_t first_index) {
  if (B <= 0) throw ValidationError("sample_batch: batch size must be positive");
  std::vector<Sample> out(B);
  for (int i = 0; i < B; ++i) {
    Rng rng(seed, "data", first_index + static_cast<std::uint64_t>(i));
    out[i] = sample_instance(gt, rng);
  }
  return out;
}

}  // namespace scb
