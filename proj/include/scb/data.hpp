#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "scb/rng.hpp"
#include "scb/types.hpp"

namespace scb {

// Which of the generation constraints a candidate (P, mu) fails, if any.
enum class TransitionCheck {
  ok,
  mu_out_of_range,        // some mu_k outside [1/(CN), C/N]
  trivial_transition,     // K_P < |mu|^2
};

TransitionCheck check_transition(const Eigen::MatrixXd& P,
                                 const Eigen::VectorXd& mu, double C);

// Fixed point of v -> P v by power iteration (columns of P are the
// transition vectors). A second start detects non-unique fixed points.
Eigen::VectorXd stationary_dist(const Eigen::MatrixXd& P, double tol = 1e-12,
                                int max_iters = 100000);

// Rejection-sample a transition matrix whose stationary distribution is
// well conditioned and whose transition is nontrivial. Columns start as
// Dirichlet(1) draws; if rejection stalls the candidates are mixed toward a
// peaked symmetric chain (uniform stationary) to improve conditioning.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> gen_transition(int N, double C,
                                                           int max_tries,
                                                           std::uint64_t seed);

// T x N attention-target matrix: each column has exactly Q nonzeros at
// positions drawn uniformly without replacement, with values from a
// rescaled Dirichlet(5) rejected until they fit [1/(CQ), C/Q].
Eigen::MatrixXd gen_attention_targets(int T, int N, int Q, double C,
                                      std::uint64_t seed, int max_tries = 100000);

GroundTruth gen_ground_truth(const Dims& dims, std::uint64_t seed,
                             int max_tries = 100000);

// Probabilistically valid instance without the conditioning/nontriviality
// bounds, which no N = 2 chain can meet. Enumeration and moment tests use
// these tiny tasks.
GroundTruth gen_small_task(const Dims& dims, std::uint64_t seed);

// p_n = sum_t q^(k)_t P_{n, x_t}; the conditional law of the output token.
Eigen::VectorXd label_distribution(const GroundTruth& gt,
                                   const std::vector<std::int32_t>& x, int k);

Sample sample_instance(const GroundTruth& gt, Rng& rng);

// Per-sample substreams are derived from (seed, "data", first_index + i), so
// the batch content does not depend on evaluation order.
std::vector<Sample> sample_batch(const GroundTruth& gt, int B,
                                 std::uint64_t seed,
                                 std::uint64_t first_index);

}  // namespace scb
