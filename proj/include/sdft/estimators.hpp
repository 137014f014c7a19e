#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdft/enumerate.hpp"
#include "sdft/policy.hpp"
#include "sdft/rng.hpp"

namespace sdft {

// Reverse-KL gradient estimators for D(π_θ(·|x) ‖ π_teacher(·|x,c)).
//
// All estimators return vectors in gradient-descent convention: the trainer
// computes θ ← θ − η·g. Log-ratios are differences of log-softmax values and
// are treated as constants with respect to θ.
enum class EstimatorId { token, analytic, rb, irl };

std::string to_string(EstimatorId id);
// Accepts "token", "analytic", "rb", "irl"; throws ConfigError otherwise.
EstimatorId parse_estimator(std::string_view name);
inline constexpr EstimatorId kAllEstimators[] = {EstimatorId::token, EstimatorId::analytic, EstimatorId::rb,
                                                 EstimatorId::irl};

// A policy evaluated under its own prompt (for the teacher: x with the demonstration).
struct ConditionedPolicy {
  const PolicyParams& params;
  std::span<const TokenId> prompt;
};

// Σ_v p(v) ln(p(v)/q(v)) with 0·ln 0 = 0. Inputs are probability vectors.
double stepwise_kl(std::span<const double> p, std::span<const double> q);
// Same, from log-probability rows.
double stepwise_kl_log(std::span<const double> log_p, std::span<const double> log_q);

// Exact sequence-level reverse KL by summing over every terminated response.
double sequence_kl_exact(const PolicyParams& student, const PolicyParams& teacher,
                         std::span<const TokenId> student_prompt, std::span<const TokenId> teacher_prompt,
                         int max_len, std::size_t budget = kDefaultEnumerationBudget);

// Same quantity through the chain rule: Σ over reachable non-terminal prefixes
// of P(prefix)·stepwise_kl(prefix). Visits prefixes instead of leaves.
double sequence_kl_chain(const PolicyParams& student, const PolicyParams& teacher,
                         std::span<const TokenId> student_prompt, std::span<const TokenId> teacher_prompt,
                         int max_len, std::size_t budget = kDefaultEnumerationBudget);

// ∇_θ sequence_kl_exact with the teacher held fixed:
// Σ_y π_θ(y)·ln(π_θ(y)/π_teacher(y))·∇_θ ln π_θ(y).
GradientVector sequence_kl_grad_exact(const PolicyParams& student, const PolicyParams& teacher,
                                      std::span<const TokenId> student_prompt,
                                      std::span<const TokenId> teacher_prompt, int max_len,
                                      std::size_t budget = kDefaultEnumerationBudget);

struct Estimate {
  GradientVector grad;
  double stepwise_kl_sum = 0.0;  // Σ_t KL at each visited prefix (unweighted)
  double sequence_log_ratio = 0.0;  // ln π_θ(y) − ln π_teacher(y)
};

// Single-trajectory estimate. token_weights, when non-empty, multiplies the
// t-th summand of the estimator (importance weights and loss masks enter here).
Estimate estimate(EstimatorId id, const Trajectory& traj, const PolicyParams& student,
                  const ConditionedPolicy& teacher, std::span<const double> token_weights = {});

// Σ_t ln(π_θ(y_t)/π_T(y_t)) ∇ ln π_θ(y_t)
GradientVector grad_token(const Trajectory& traj, const PolicyParams& student, const ConditionedPolicy& teacher);
// Σ_t Σ_v π_θ(v) ln(π_θ(v)/π_T(v)) ∇ ln π_θ(v): the stepwise-KL gradient at each visited prefix.
GradientVector grad_analytic(const Trajectory& traj, const PolicyParams& student, const ConditionedPolicy& teacher);
// Analytic term plus k_t · Σ_{i<t} ∇ ln π_θ(y_i): unbiased for the full sequence-KL gradient.
GradientVector grad_rb(const Trajectory& traj, const PolicyParams& student, const ConditionedPolicy& teacher);
// REINFORCE with the implicit reward, in descent convention: −r(y)·Σ_t ∇ ln π_θ(y_t).
GradientVector grad_irl_trajectory(const Trajectory& traj, const PolicyParams& student,
                                   const ConditionedPolicy& teacher);
// The raw policy gradient r(y)·Σ_t ∇ ln π_θ(y_t) (reward-ascent direction); the negation of the above.
GradientVector irl_policy_gradient(const Trajectory& traj, const PolicyParams& student,
                                   const ConditionedPolicy& teacher);

struct ImplicitReward {
  double total = 0.0;
  std::vector<double> per_token;
};

// r_t = ln π_teacher(y_t|y_<t, x, c) − ln π_snapshot(y_t|y_<t, x).
ImplicitReward implicit_reward(const Trajectory& traj, const PolicyParams& snapshot,
                               const ConditionedPolicy& teacher);

// Σ_y π_θ(y)·g(y) over the full enumeration: the exact expectation of a single-trajectory estimator.
GradientVector expected_estimate(EstimatorId id, const PolicyParams& student, const ConditionedPolicy& teacher,
                                 std::span<const TokenId> student_prompt, int max_len,
                                 std::size_t budget = kDefaultEnumerationBudget);

struct EstimatorStats {
  GradientVector mean;
  std::vector<double> variance;  // per-coordinate sample variance
  double variance_trace = 0.0;
  int n_samples = 0;
};

// Empirical mean and covariance trace over n independent single-trajectory
// estimates sampled on-policy at temperature 1. Sample i draws from the stream
// derive_seed(root, {i}) with root taken from rng, so the result does not
// depend on `threads`.
EstimatorStats estimator_stats(EstimatorId id, const PolicyParams& student, const ConditionedPolicy& teacher,
                               std::span<const TokenId> student_prompt, int max_len, int n_samples, Rng& rng,
                               int threads = 1);

// One CSV row per estimator against the exact sequence-KL gradient (oracle). max_bias_z is the
// largest per-coordinate |mean − oracle| in standard errors; exact_max_abs_bias compares the
// enumerated expectation (expected) with the oracle.
std::string stats_csv_header();
std::string stats_csv_row(EstimatorId id, const EstimatorStats& stats, const GradientVector& oracle,
                          const GradientVector& expected);

}  // namespace sdft
