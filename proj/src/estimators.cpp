#include "sdft/estimators.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "sdft/errors.hpp"
#include "sdft/parallel.hpp"

namespace sdft {

std::string to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::token: return "token";
    case EstimatorId::analytic: return "analytic";
    case EstimatorId::rb: return "rb";
    case EstimatorId::irl: return "irl";
  }
  return "?";
}

EstimatorId parse_estimator(std::string_view name) {
  for (EstimatorId id : kAllEstimators)
    if (to_string(id) == name) return id;
  throw ConfigError("unknown estimator '" + std::string(name) + "' (valid: token, analytic, rb, irl)");
}

double stepwise_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("stepwise_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v)
    if (p[v] > 0.0) kl += p[v] * (std::log(p[v]) - std::log(q[v]));
  return std::max(kl, 0.0);
}

double stepwise_kl_log(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) throw InputError("stepwise_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t v = 0; v < log_p.size(); ++v) {
    const double p = std::exp(log_p[v]);
    if (p > 0.0) kl += p * (log_p[v] - log_q[v]);
  }
  return std::max(kl, 0.0);
}

double sequence_kl_exact(const PolicyParams& student, const PolicyParams& teacher,
                         std::span<const TokenId> student_prompt, std::span<const TokenId> teacher_prompt,
                         int max_len, std::size_t budget) {
  if (student.vocab != teacher.vocab) throw InputError("student and teacher vocabularies differ");
  double kl = 0.0;
  for (const TokenSeq& y : enumerate_responses(student.vocab, max_len, budget)) {
    const double ls = logprob_response(student, student_prompt, y).total;
    const double lt = logprob_response(teacher, teacher_prompt, y).total;
    kl += std::exp(ls) * (ls - lt);
  }
  return kl;
}

double sequence_kl_chain(const PolicyParams& student, const PolicyParams& teacher,
                         std::span<const TokenId> student_prompt, std::span<const TokenId> teacher_prompt,
                         int max_len, std::size_t budget) {
  if (student.vocab != teacher.vocab) throw InputError("student and teacher vocabularies differ");
  check_enumeration_budget(student.vocab.size, max_len, budget);
  const TokenId eos = student.vocab.eos;
  TokenSeq sp(student_prompt.begin(), student_prompt.end());
  TokenSeq tp(teacher_prompt.begin(), teacher_prompt.end());
  double kl = 0.0;
  auto visit = [&](auto&& self, double prefix_prob, int depth) -> void {
    const auto ls = step_log_probs(student, sp);
    const auto lt = step_log_probs(teacher, tp);
    kl += prefix_prob * stepwise_kl_log(ls, lt);
    if (depth + 1 >= max_len) return;
    for (TokenId v = 0; v < student.vocab.size; ++v) {
      if (v == eos) continue;
      sp.push_back(v);
      tp.push_back(v);
      self(self, prefix_prob * std::exp(ls[v]), depth + 1);
      sp.pop_back();
      tp.pop_back();
    }
  };
  visit(visit, 1.0, 0);
  return kl;
}

GradientVector sequence_kl_grad_exact(const PolicyParams& student, const PolicyParams& teacher,
                                      std::span<const TokenId> student_prompt,
                                      std::span<const TokenId> teacher_prompt, int max_len, std::size_t budget) {
  if (student.vocab != teacher.vocab) throw InputError("student and teacher vocabularies differ");
  GradientVector total(student.size());
  for (const TokenSeq& y : enumerate_responses(student.vocab, max_len, budget)) {
    const double ls = logprob_response(student, student_prompt, y).total;
    const double lt = logprob_response(teacher, teacher_prompt, y).total;
    GradientVector g = grad_logprob(student, student_prompt, y);
    g *= std::exp(ls) * (ls - lt);
    total += g;
  }
  return total;
}

Estimate estimate(EstimatorId id, const Trajectory& traj, const PolicyParams& student,
                  const ConditionedPolicy& teacher, std::span<const double> token_weights) {
  if (student.vocab != teacher.params.vocab) throw InputError("student and teacher vocabularies differ");
  const int T = static_cast<int>(traj.response.size());
  if (!token_weights.empty() && static_cast<int>(token_weights.size()) != T)
    throw InputError("token_weights length must match the response");
  Estimate out{GradientVector(student.size()), 0.0, 0.0};
  if (T == 0) return out;

  const ResponsePass sp(student, traj.prompt, traj.response);
  const ResponsePass tp(teacher.params, teacher.prompt, traj.response);
  const RowMatrix& S = sp.log_probs();
  const RowMatrix& Q = tp.log_probs();
  const int V = student.vocab.size;
  auto weight = [&](int t) { return token_weights.empty() ? 1.0 : token_weights[t]; };

  std::vector<double> k(T);
  for (int t = 0; t < T; ++t) {
    k[t] = stepwise_kl_log(S.row(t), Q.row(t));
    out.stepwise_kl_sum += k[t];
    out.sequence_log_ratio += S.at(t, traj.response[t]) - Q.at(t, traj.response[t]);
  }

  RowMatrix cot(T, V);
  // Adds c · ∇ ln π_θ(y_t | y_<t) = c · (e_{y_t} − p_t) to the cotangent.
  auto add_score = [&](int t, double c) {
    if (c == 0.0) return;
    for (int v = 0; v < V; ++v) cot.at(t, v) -= c * std::exp(S.at(t, v));
    cot.at(t, traj.response[t]) += c;
  };
  // Adds c · Σ_v p_t(v)·lr_t(v)·∇ ln p_t(v) = c · p_t ⊙ (lr_t − k_t).
  auto add_analytic = [&](int t, double c) {
    if (c == 0.0) return;
    for (int v = 0; v < V; ++v) {
      const double p = std::exp(S.at(t, v));
      cot.at(t, v) += c * p * ((S.at(t, v) - Q.at(t, v)) - k[t]);
    }
  };

  switch (id) {
    case EstimatorId::token:
      for (int t = 0; t < T; ++t) {
        const TokenId y = traj.response[t];
        add_score(t, weight(t) * (S.at(t, y) - Q.at(t, y)));
      }
      break;
    case EstimatorId::analytic:
      for (int t = 0; t < T; ++t) add_analytic(t, weight(t));
      break;
    case EstimatorId::rb: {
      for (int t = 0; t < T; ++t) add_analytic(t, weight(t));
      // Σ_t w_t k_t Σ_{i<t} score_i  =  Σ_i score_i · Σ_{t>i} w_t k_t
      double suffix = 0.0;
      for (int i = T - 1; i >= 0; --i) {
        add_score(i, suffix);
        suffix += weight(i) * k[i];
      }
      break;
    }
    case EstimatorId::irl:
      for (int t = 0; t < T; ++t) add_score(t, weight(t) * out.sequence_log_ratio);
      break;
  }
  sp.backward(cot, out.grad.values);
  return out;
}

GradientVector grad_token(const Trajectory& traj, const PolicyParams& student, const ConditionedPolicy& teacher) {
  return estimate(EstimatorId::token, traj, student, teacher).grad;
}

GradientVector grad_analytic(const Trajectory& traj, const PolicyParams& student,
                             const ConditionedPolicy& teacher) {
  return estimate(EstimatorId::analytic, traj, student, teacher).grad;
}

GradientVector grad_rb(const Trajectory& traj, const PolicyParams& student, const ConditionedPolicy& teacher) {
  return estimate(EstimatorId::rb, traj, student, teacher).grad;
}

GradientVector grad_irl_trajectory(const Trajectory& traj, const PolicyParams& student,
                                   const ConditionedPolicy& teacher) {
  return estimate(EstimatorId::irl, traj, student, teacher).grad;
}

GradientVector irl_policy_gradient(const Trajectory& traj, const PolicyParams& student,
                                   const ConditionedPolicy& teacher) {
  GradientVector g = grad_irl_trajectory(traj, student, teacher);
  g *= -1.0;
  return g;
}

ImplicitReward implicit_reward(const Trajectory& traj, const PolicyParams& snapshot,
                               const ConditionedPolicy& teacher) {
  ImplicitReward r;
  if (traj.response.empty()) return r;
  const auto ls = logprob_response(snapshot, traj.prompt, traj.response);
  const auto lt = logprob_response(teacher.params, teacher.prompt, traj.response);
  r.per_token.resize(traj.response.size());
  for (std::size_t t = 0; t < traj.response.size(); ++t) {
    r.per_token[t] = lt.per_token[t] - ls.per_token[t];
    r.total += r.per_token[t];
  }
  return r;
}

GradientVector expected_estimate(EstimatorId id, const PolicyParams& student, const ConditionedPolicy& teacher,
                                 std::span<const TokenId> student_prompt, int max_len, std::size_t budget) {
  GradientVector total(student.size());
  for (const TokenSeq& y : enumerate_responses(student.vocab, max_len, budget)) {
    Trajectory tr;
    tr.prompt.assign(student_prompt.begin(), student_prompt.end());
    tr.response = y;
    const auto lp = logprob_response(student, student_prompt, y);
    tr.student_logprobs = lp.per_token;
    tr.sampler_logprobs = lp.per_token;
    GradientVector g = estimate(id, tr, student, teacher).grad;
    g *= std::exp(lp.total);
    total += g;
  }
  return total;
}

EstimatorStats estimator_stats(EstimatorId id, const PolicyParams& student, const ConditionedPolicy& teacher,
                               std::span<const TokenId> student_prompt, int max_len, int n_samples, Rng& rng,
                               int threads) {
  if (n_samples < 2) throw InputError("estimator_stats needs n_samples >= 2");
  const std::uint64_t root = rng.next();
  const std::size_t P = student.size();
  EstimatorStats st;
  st.n_samples = n_samples;
  st.mean = GradientVector(P);
  std::vector<double> m2(P, 0.0);

  constexpr std::size_t kChunk = 2048;
  std::vector<GradientVector> chunk;
  long seen = 0;
  for (std::size_t start = 0; start < static_cast<std::size_t>(n_samples); start += kChunk) {
    const std::size_t len = std::min(kChunk, static_cast<std::size_t>(n_samples) - start);
    chunk.assign(len, GradientVector());
    parallel_for(len, threads, [&](std::size_t j) {
      Rng local(derive_seed(root, {start + j}));
      const Trajectory tr = sample_response(student, student_prompt, max_len, 1.0, local);
      chunk[j] = estimate(id, tr, student, teacher).grad;
    });
    // Welford, in sample order.
    for (const GradientVector& g : chunk) {
      ++seen;
      for (std::size_t i = 0; i < P; ++i) {
        const double delta = g[i] - st.mean[i];
        st.mean[i] += delta / static_cast<double>(seen);
        m2[i] += delta * (g[i] - st.mean[i]);
      }
    }
  }
  st.variance.resize(P);
  for (std::size_t i = 0; i < P; ++i) {
    st.variance[i] = m2[i] / static_cast<double>(n_samples - 1);
    st.variance_trace += st.variance[i];
  }
  return st;
}

std::string stats_csv_header() {
  return "estimator,n_samples,variance_trace,max_abs_bias,max_bias_z,exact_max_abs_bias";
}

std::string stats_csv_row(EstimatorId id, const EstimatorStats& stats, const GradientVector& oracle,
                          const GradientVector& expected) {
  if (oracle.size() != stats.mean.size() || expected.size() != oracle.size())
    throw InputError("oracle length mismatch");
  double bias = 0.0, z = 0.0, exact = 0.0;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const double d = std::abs(stats.mean[i] - oracle[i]);
    bias = std::max(bias, d);
    const double se = std::sqrt(stats.variance[i] / stats.n_samples);
    // A coordinate the estimator never moves contributes only when it misses the oracle.
    if (se > 0.0) z = std::max(z, d / se);
    else if (d > 1e-12) z = std::numeric_limits<double>::infinity();
    exact = std::max(exact, std::abs(expected[i] - oracle[i]));
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s,%d,%.12g,%.12g,%.6g,%.12g", to_string(id).c_str(), stats.n_samples,
                stats.variance_trace, bias, z, exact);
  return buf;
}

}  // namespace sdft
