#include <gtest/gtest.h>

#include <cmath>

#include "sdft/enumerate.hpp"
#include "sdft/errors.hpp"
#include "sdft/estimators.hpp"
#include "test_support.hpp"

using namespace sdft;
using namespace sdft::testing;

namespace {

constexpr int kV = 5;
constexpr int kLen = 3;
const TokenSeq kStudentPrompt{1};
const TokenSeq kTeacherPrompt{3};

struct Pair {
  PolicyParams student = random_tabular(kV, 1, 1);
  PolicyParams teacher = random_tabular(kV, 1, 2);
  ConditionedPolicy teacher_view() const { return {teacher, kTeacherPrompt}; }
};

std::vector<double> table_row(const PolicyParams& p, TokenId last) {
  std::vector<double> z(p.theta.begin() + last * kV, p.theta.begin() + (last + 1) * kV);
  double s = 0.0;
  for (double v : z) s += std::exp(v);
  for (double& v : z) v = std::exp(v) / s;
  return z;
}

// Brute-force sequence probability for a window-1 table, written from scratch.
double seq_prob(const PolicyParams& p, TokenId start, const TokenSeq& y) {
  double prob = 1.0;
  TokenId last = start;
  for (TokenId t : y) {
    prob *= table_row(p, last)[t];
    last = t;
  }
  return prob;
}

// Every response of length <= kLen that ends in eos (2) or runs to kLen, built by nested loops.
std::vector<TokenSeq> all_responses() {
  std::vector<TokenSeq> out;
  for (int a = 0; a < kV; ++a) {
    if (a == 2) { out.push_back({2}); continue; }
    for (int b = 0; b < kV; ++b) {
      if (b == 2) { out.push_back({a, 2}); continue; }
      for (int c = 0; c < kV; ++c) out.push_back({a, b, c});
    }
  }
  return out;
}

Trajectory make_traj(const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& y) {
  Trajectory tr;
  tr.prompt = prompt;
  tr.response = y;
  tr.student_logprobs = logprob_response(p, prompt, y).per_token;
  tr.sampler_logprobs = tr.student_logprobs;
  return tr;
}

std::vector<double> vec(const GradientVector& g) { return g.values; }

}  // namespace

TEST(StepwiseKl, WorkedExample) {
  const std::vector<double> p{0.5, 0.5}, q{0.9, 0.1};
  EXPECT_NEAR(stepwise_kl(p, q), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(5.0), 1e-15);
  EXPECT_NEAR(stepwise_kl(p, q), 0.510826, 1e-6);
  const std::vector<double> a{0.5, 0.5}, b{0.75, 0.25};
  EXPECT_NEAR(stepwise_kl(a, b), 0.143841, 1e-6);
}

TEST(StepwiseKl, ZeroProbabilityTermsVanish) {
  const std::vector<double> p{0.0, 1.0}, q{0.3, 0.7};
  EXPECT_NEAR(stepwise_kl(p, q), -std::log(0.7), 1e-15);
}

TEST(StepwiseKl, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(6), q(6);
    double sp = 0, sq = 0;
    for (int v = 0; v < 6; ++v) {
      sp += p[v] = rng.uniform() + 1e-3;
      sq += q[v] = rng.uniform() + 1e-3;
    }
    for (int v = 0; v < 6; ++v) p[v] /= sp, q[v] /= sq;
    EXPECT_GT(stepwise_kl(p, q), 0.0);
    EXPECT_NEAR(stepwise_kl(p, p), 0.0, 1e-15);
  }
}

TEST(SequenceKl, MatchesBruteForce) {
  const Pair f;
  double ref = 0.0;
  for (const TokenSeq& y : all_responses()) {
    const double ps = seq_prob(f.student, 1, y), pt = seq_prob(f.teacher, 3, y);
    ref += ps * std::log(ps / pt);
  }
  EXPECT_GT(ref, 0.01);
  EXPECT_NEAR(sequence_kl_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen), ref, 1e-12);
  EXPECT_NEAR(sequence_kl_chain(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen), ref, 1e-12);
}

TEST(SequenceKl, SingleStepReducesToStepwise) {
  const Pair f;
  const double exact = sequence_kl_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, 1);
  EXPECT_NEAR(exact, stepwise_kl(table_row(f.student, 1), table_row(f.teacher, 3)), 1e-13);
}

TEST(SequenceKl, ChainAgreesOnTransformer) {
  const auto s = init_policy(Vocab{}, tiny_transformer(), 1);
  auto t = init_policy(Vocab{}, tiny_transformer(), 2);
  const TokenSeq sp{1, 8, 3}, tp{1, 8, 3, 9, 10, 3};
  EXPECT_NEAR(sequence_kl_exact(s, t, sp, tp, 2), sequence_kl_chain(s, t, sp, tp, 2), 1e-11);
  EXPECT_NEAR(sequence_kl_exact(s, s, sp, sp, 2), 0.0, 1e-12);
}

TEST(SequenceKl, GradientMatchesFiniteDifference) {
  const Pair f;
  const auto g = sequence_kl_grad_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen);
  std::vector<std::size_t> coords(f.student.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  const auto fd = finite_difference(
      f.student,
      [&](const PolicyParams& q) { return sequence_kl_exact(q, f.teacher, kStudentPrompt, kTeacherPrompt, kLen); },
      coords);
  EXPECT_LT(relative_error(vec(g), fd), 1e-6);
}

TEST(SequenceKl, GradientVanishesWhenTeacherEqualsStudent) {
  const Pair f;
  const auto g = sequence_kl_grad_exact(f.student, f.student, kStudentPrompt, kStudentPrompt, kLen);
  EXPECT_LT(g.norm(), 1e-13);
}

TEST(Estimators, ZeroWhenTeacherEqualsStudent) {
  const Pair f;
  const ConditionedPolicy self{f.student, kStudentPrompt};
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto tr = sample_response(f.student, kStudentPrompt, kLen, 1.0, rng);
    for (EstimatorId id : kAllEstimators) EXPECT_LT(estimate(id, tr, f.student, self).grad.norm(), 1e-13);
  }
}

TEST(Estimators, UnbiasedForSequenceKlGradient) {
  const Pair f;
  const auto exact = vec(sequence_kl_grad_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen));
  const auto rb = vec(expected_estimate(EstimatorId::rb, f.student, f.teacher_view(), kStudentPrompt, kLen));
  const auto irl = vec(expected_estimate(EstimatorId::irl, f.student, f.teacher_view(), kStudentPrompt, kLen));
  EXPECT_LT(max_abs_diff(rb, exact), 1e-10);
  EXPECT_LT(max_abs_diff(irl, exact), 1e-10);

  // The raw reward-ascent policy gradient is the negation.
  GradientVector pg(f.student.size());
  for (const TokenSeq& y : enumerate_responses(f.student.vocab, kLen)) {
    auto g = irl_policy_gradient(make_traj(f.student, kStudentPrompt, y), f.student, f.teacher_view());
    g *= std::exp(logprob_response(f.student, kStudentPrompt, y).total);
    pg += g;
  }
  for (std::size_t i = 0; i < pg.size(); ++i) EXPECT_NEAR(-pg[i], exact[i], 1e-10);
}

TEST(Estimators, TokenAndAnalyticShareExpectationButAreBiased) {
  const Pair f;
  const auto exact = vec(sequence_kl_grad_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen));
  const auto tok = vec(expected_estimate(EstimatorId::token, f.student, f.teacher_view(), kStudentPrompt, kLen));
  const auto ana = vec(expected_estimate(EstimatorId::analytic, f.student, f.teacher_view(), kStudentPrompt, kLen));
  EXPECT_LT(max_abs_diff(tok, ana), 1e-10);
  EXPECT_GT(max_abs_diff(ana, exact), 1e-3);
}

TEST(Estimators, SingleStepAnalyticEqualsRb) {
  const Pair f;
  for (TokenId y = 0; y < kV; ++y) {
    const auto tr = make_traj(f.student, kStudentPrompt, {y});
    EXPECT_LT(max_abs_diff(vec(grad_analytic(tr, f.student, f.teacher_view())),
                           vec(grad_rb(tr, f.student, f.teacher_view()))),
              1e-15);
  }
}

TEST(Estimators, AnalyticIsStepwiseKlGradientAtEachPrefix) {
  // Holding the visited prefix fixed, the analytic term equals Σ_t ∇ KL(p_t ‖ q_t).
  const Pair f;
  const TokenSeq y{4, 0, 3};
  const auto tr = make_traj(f.student, kStudentPrompt, y);
  const auto g = vec(grad_analytic(tr, f.student, f.teacher_view()));
  std::vector<std::size_t> coords(f.student.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  const auto fd = finite_difference(
      f.student,
      [&](const PolicyParams& q) {
        double k = 0.0;
        TokenId sl = 1, tl = 3;
        for (TokenId t : y) {
          k += stepwise_kl(table_row(q, sl), table_row(f.teacher, tl));
          sl = tl = t;
        }
        return k;
      },
      coords);
  EXPECT_LT(relative_error(g, fd), 1e-6);
}

TEST(Estimators, RbDecomposesIntoAnalyticPlusFutureKlScore) {
  const Pair f;
  const TokenSeq y{0, 4, 1};
  const auto tr = make_traj(f.student, kStudentPrompt, y);
  const auto est = estimate(EstimatorId::rb, tr, f.student, f.teacher_view());
  const auto ana = grad_analytic(tr, f.student, f.teacher_view());
  // k_t recomputed from table rows.
  std::vector<double> k;
  TokenId sl = 1, tl = 3;
  for (TokenId t : y) {
    k.push_back(stepwise_kl(table_row(f.student, sl), table_row(f.teacher, tl)));
    sl = tl = t;
  }
  GradientVector expect = ana;
  for (int i = 0; i < 3; ++i) {
    double future = 0.0;
    for (int t = i + 1; t < 3; ++t) future += k[t];
    TokenSeq prefix(kStudentPrompt);
    prefix.insert(prefix.end(), y.begin(), y.begin() + i);
    const TokenSeq one{y[i]};
    auto score = grad_logprob(f.student, prefix, one);
    score *= future;
    expect += score;
  }
  EXPECT_LT(max_abs_diff(vec(est.grad), vec(expect)), 1e-13);
  EXPECT_NEAR(est.stepwise_kl_sum, k[0] + k[1] + k[2], 1e-13);
}

TEST(Estimators, ShiftingTeacherLogitsChangesNothing) {
  const Pair f;
  PolicyParams shifted = f.teacher;
  for (int row = 0; row < kV; ++row)
    for (int v = 0; v < kV; ++v) shifted.theta[row * kV + v] += 3.0 + row;
  const ConditionedPolicy sv{shifted, kTeacherPrompt};
  const auto tr = make_traj(f.student, kStudentPrompt, {4, 4, 2});
  for (EstimatorId id : kAllEstimators)
    EXPECT_LT(max_abs_diff(vec(estimate(id, tr, f.student, f.teacher_view()).grad),
                           vec(estimate(id, tr, f.student, sv).grad)),
              1e-12);
}

TEST(Estimators, AnalyticHasLowerVarianceThanToken) {
  const Pair f;
  Rng a(100), b(100);
  const auto tok = estimator_stats(EstimatorId::token, f.student, f.teacher_view(), kStudentPrompt, kLen, 20000, a);
  const auto ana = estimator_stats(EstimatorId::analytic, f.student, f.teacher_view(), kStudentPrompt, kLen, 20000, b);
  EXPECT_LT(ana.variance_trace, tok.variance_trace);
}

TEST(Estimators, RbHasLowerVarianceThanIrl) {
  const Pair f;
  Rng a(100), b(100);
  const auto rb = estimator_stats(EstimatorId::rb, f.student, f.teacher_view(), kStudentPrompt, kLen, 20000, a);
  const auto irl = estimator_stats(EstimatorId::irl, f.student, f.teacher_view(), kStudentPrompt, kLen, 20000, b);
  EXPECT_LT(rb.variance_trace, irl.variance_trace);
}

TEST(Estimators, MonteCarloMeanWithinThreeStandardErrors) {
  const Pair f;
  const auto exact = sequence_kl_grad_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen);
  Rng rng(31);
  const int n = 20000;
  const auto st = estimator_stats(EstimatorId::rb, f.student, f.teacher_view(), kStudentPrompt, kLen, n, rng);
  int outside = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double se = std::sqrt(st.variance[i] / n);
    if (std::abs(st.mean[i] - exact[i]) > 3 * se + 1e-12) ++outside;
  }
  // 25 coordinates at 3σ: a couple of excursions are within chance.
  EXPECT_LE(outside, 2);
}

TEST(Estimators, StatsIndependentOfThreadCount) {
  const Pair f;
  Rng a(8), b(8);
  const auto one = estimator_stats(EstimatorId::token, f.student, f.teacher_view(), kStudentPrompt, kLen, 3000, a, 1);
  const auto four = estimator_stats(EstimatorId::token, f.student, f.teacher_view(), kStudentPrompt, kLen, 3000, b, 4);
  EXPECT_EQ(one.mean.values, four.mean.values);
  EXPECT_EQ(one.variance_trace, four.variance_trace);
}

TEST(Estimators, TokenWeightsScaleTerms) {
  const Pair f;
  const auto tr = make_traj(f.student, kStudentPrompt, {0, 4, 2});
  const std::vector<double> zero{0.0, 0.0, 0.0}, two{2.0, 2.0, 2.0};
  for (EstimatorId id : kAllEstimators) {
    EXPECT_LT(estimate(id, tr, f.student, f.teacher_view(), zero).grad.norm(), 1e-15);
    auto base = estimate(id, tr, f.student, f.teacher_view()).grad;
    base *= 2.0;
    EXPECT_LT(max_abs_diff(vec(estimate(id, tr, f.student, f.teacher_view(), two).grad), vec(base)), 1e-13);
  }
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(estimate(EstimatorId::rb, tr, f.student, f.teacher_view(), wrong), InputError);
}

TEST(ImplicitReward, TelescopesToSequenceLogRatio) {
  const Pair f;
  const TokenSeq y{4, 0, 2};
  const auto r = implicit_reward(make_traj(f.student, kStudentPrompt, y), f.student, f.teacher_view());
  double sum = 0.0;
  for (double v : r.per_token) sum += v;
  EXPECT_NEAR(sum, r.total, 1e-14);
  EXPECT_NEAR(r.total, std::log(seq_prob(f.teacher, 3, y) / seq_prob(f.student, 1, y)), 1e-12);
}

TEST(ImplicitReward, ExpectedRewardIsNegativeKl) {
  const Pair f;
  double er = 0.0;
  for (const TokenSeq& y : all_responses())
    er += seq_prob(f.student, 1, y) *
          implicit_reward(make_traj(f.student, kStudentPrompt, y), f.student, f.teacher_view()).total;
  EXPECT_NEAR(er, -sequence_kl_exact(f.student, f.teacher, kStudentPrompt, kTeacherPrompt, kLen), 1e-12);
}

TEST(EstimatorNames, RoundTripAndRejectUnknown) {
  for (EstimatorId id : kAllEstimators) EXPECT_EQ(parse_estimator(to_string(id)), id);
  EXPECT_THROW(parse_estimator("reinforce"), ConfigError);
}
