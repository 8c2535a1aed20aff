#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scb/model.hpp"
#include "scb/types.hpp"

namespace scb {

struct EnumBudget {
  long max_outcomes = 1000000;  // cap on N^(T+1) * N
};

// Exhaustive enumeration of (x, x_{T+1}, x_o) with exact probabilities. The
// conditional law follows the two-step sampling description (pick a position
// from q^(k), then one Markov step), deliberately a different derivation
// from label_distribution.
void enumerate_outcomes(
    const GroundTruth& gt, const EnumBudget& budget,
    const std::function<void(const std::vector<std::int32_t>& x, int k,
                             int x_o, double p)>& visit);

double enumerated_total_probability(const GroundTruth& gt,
                                    const EnumBudget& budget);

struct ValuePair {
  double enumerated = 0.0;
  double closed_form = 0.0;
  double diff() const { return std::abs(enumerated - closed_form); }
};

// P(x_o = n, x_t = m | x_{T+1} = k): enumeration vs the product formula.
ValuePair exact_joint_prob(const GroundTruth& gt, int n, int m, int t, int k,
                           const EnumBudget& budget = {});

// P(x_o = n | x_{T+1} = k, x_s = m, x_t = l), s != t.
ValuePair exact_cond_prob(const GroundTruth& gt, int n, int k, int s, int m,
                          int t, int l, const EnumBudget& budget = {});

struct ExpectedGradsOracle {
  GradPair raw;
  GradPair preconditioned;
};

// Enumerated expectations of the plain and preconditioned gradients.
ExpectedGradsOracle oracle_expected_grads(const GroundTruth& gt,
                                          const ModelParams& params,
                                          const EnumBudget& budget = {});

// Max |enumerated - closed form| per moment/gradient formula, keyed
// "joint_prob", "cond_prob", "gradient_formula", "token_second_moment",
// "value_second_moment", "output_value_moment", "expected_gradients",
// "expected_preconditioned_gradients".
struct MomentReport {
  std::map<std::string, double> max_abs_diff;
  double worst() const;
};

MomentReport exact_moment_checks(const GroundTruth& gt,
                                 const ModelParams& params,
                                 const EnumBudget& budget = {});

// Throws FormulaMismatchError if any entry of the report exceeds tol.
void require_agreement(const MomentReport& report, double tol = 1e-10);

}  // namespace scb
