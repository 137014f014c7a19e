#include "sdft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "sdft/errors.hpp"
#include "sdft/estimators.hpp"
#include "sdft/parallel.hpp"
#include "sdft/rng.hpp"

namespace sdft {

TokenSeq prompt_for(const TaskInstance& inst, const Vocab& vocab, PromptMode mode) {
  return mode == PromptMode::student ? build_student_prompt(inst.x, vocab)
                                     : build_teacher_prompt(inst.x, inst.c, vocab);
}

std::vector<TokenSeq> accepted_responses(const TaskInstance& inst, const Vocab& vocab) {
  std::vector<TokenSeq> out{reference_response(inst, vocab)};
  for (TokenSeq a : inst.also_accept) {
    a.push_back(vocab.eos);
    out.push_back(std::move(a));
  }
  return out;
}

bool is_accepted(const std::vector<TokenSeq>& accepted, const TokenSeq& response) {
  return std::find(accepted.begin(), accepted.end(), response) != accepted.end();
}

namespace {

int longest(const std::vector<TokenSeq>& seqs) {
  std::size_t n = 0;
  for (const TokenSeq& s : seqs) n = std::max(n, s.size());
  return static_cast<int>(n);
}

}  // namespace

double exact_match_accuracy(const PolicyParams& policy, const std::vector<TaskInstance>& instances, PromptMode mode,
                            int threads) {
  if (instances.empty()) throw InputError("exact_match_accuracy: no instances");
  std::vector<char> hit(instances.size(), 0);
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    const auto want = accepted_responses(instances[i], policy.vocab);
    const TokenSeq prompt = prompt_for(instances[i], policy.vocab, mode);
    hit[i] = is_accepted(want, greedy_decode(policy, prompt, longest(want)));
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(instances.size());
}

double pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n) throw InputError("pass_at_k: need 0 <= c <= n and n >= 1");
  if (k < 1 || k > n) throw InputError("pass_at_k: need 1 <= k <= n");
  if (n - c < k) return 1.0;
  // C(n−c, k)/C(n, k) = Π_{i=0}^{k−1} (n−c−i)/(n−i)
  double log_ratio = 0.0;
  for (int i = 0; i < k; ++i) log_ratio += std::log1p(-static_cast<double>(c) / static_cast<double>(n - i));
  return -std::expm1(log_ratio);
}

PassAtK pass_at_k_table(const PolicyParams& policy, const std::vector<TaskInstance>& instances, PromptMode mode,
                        int n_samples, const std::vector<int>& ks, std::uint64_t seed, int threads) {
  if (instances.empty()) throw InputError("pass_at_k_table: no instances");
  for (int k : ks)
    if (k < 1 || k > n_samples) throw InputError("pass@k: k=" + std::to_string(k) + " outside [1, n_samples]");
  std::vector<int> correct(instances.size(), 0);
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    const auto want = accepted_responses(instances[i], policy.vocab);
    const TokenSeq prompt = prompt_for(instances[i], policy.vocab, mode);
    for (int j = 0; j < n_samples; ++j) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(j)}));
      correct[i] += is_accepted(want, sample_response(policy, prompt, longest(want), 1.0, rng).response);
    }
  });
  PassAtK out{ks, {}};
  for (int k : ks) {
    double s = 0.0;
    for (int c : correct) s += pass_at_k(n_samples, c, k);
    out.values.push_back(s / static_cast<double>(instances.size()));
  }
  return out;
}

KlMode parse_kl_mode(const std::string& name) {
  if (name == "exact") return KlMode::exact;
  if (name == "mc") return KlMode::mc;
  throw ConfigError("unknown kl mode '" + name + "' (valid: exact, mc)");
}

double kl_to_base(const PolicyParams& policy, const PolicyParams& base, const std::vector<TokenSeq>& probes,
                  int max_len, KlMode mode, int mc_samples, std::uint64_t seed, int threads) {
  if (probes.empty()) throw InputError("kl_to_base: no probes");
  if (mode == KlMode::mc && mc_samples < 1) throw InputError("kl_to_base: mc mode needs mc_samples >= 1");
  if (mode == KlMode::exact) check_enumeration_budget(policy.vocab.size, max_len, kDefaultEnumerationBudget);
  std::vector<double> per(probes.size(), 0.0);
  parallel_for(probes.size(), threads, [&](std::size_t i) {
    if (mode == KlMode::exact) {
      per[i] = sequence_kl_chain(policy, base, probes[i], probes[i], max_len);
      return;
    }
    double s = 0.0;
    for (int j = 0; j < mc_samples; ++j) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(j)}));
      const Trajectory tr = sample_response(policy, probes[i], max_len, 1.0, rng);
      double lp = 0.0;
      for (double v : tr.student_logprobs) lp += v;
      s += lp - logprob_response(base, probes[i], tr.response).total;
    }
    per[i] = s / mc_samples;
  });
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

double normalized_score(double acc, double base_acc, double max_acc) {
  if (!(max_acc > base_acc)) throw InputError("normalized_score: max_acc must exceed base_acc");
  return (acc - base_acc) / (max_acc - base_acc);
}

std::vector<double> forgetting_scores(const AccuracyMatrix& m) {
  const std::size_t n_tasks = m.tasks.size();
  if (m.acc.size() != m.steps.size()) throw InputError("accuracy matrix: steps and rows differ");
  for (const auto& row : m.acc)
    if (row.size() != n_tasks) throw InputError("accuracy matrix: ragged row");
  std::vector<double> out(n_tasks, 0.0);
  if (m.acc.empty()) return out;
  for (std::size_t j = 0; j < n_tasks; ++j) {
    const std::int64_t start = j < m.phase_start.size() ? m.phase_start[j] : 0;
    double peak = -1.0;
    for (std::size_t r = 0; r < m.acc.size(); ++r)
      if (m.steps[r] >= start) peak = std::max(peak, m.acc[r][j]);
    const double final_acc = m.acc.back()[j];
    out[j] = peak < 0.0 ? 0.0 : peak - final_acc;
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string accuracy_matrix_csv(const AccuracyMatrix& m) {
  std::ostringstream os;
  os << "step";
  for (const auto& t : m.tasks) os << ',' << t;
  os << '\n';
  for (std::size_t r = 0; r < m.acc.size(); ++r) {
    os << m.steps[r];
    for (double a : m.acc[r]) os << ',' << fmt(a);
    os << '\n';
  }
  return os.str();
}

MeanCi mean_ci95(const std::vector<double>& values) {
  if (values.size() < 2) throw InputError("mean_ci95: need at least two values");
  MeanCi out;
  out.n = static_cast<int>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / out.n;
  const double se = std::sqrt(sample_variance(values) / out.n);
  const boost::math::students_t dist(out.n - 1);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  out.lo = out.mean - t * se;
  out.hi = out.mean + t * se;
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_variance(const std::vector<double>& values) {
  if (values.size() < 2) throw InputError("sample_variance: need at least two values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double s = 0.0;
  for (double v : values) s += (v - mean) * (v - mean);
  return s / static_cast<double>(values.size() - 1);
}

std::string eval_report_csv_header(const std::vector<int>& ks) {
  std::string h = "task,step,n,accuracy";
  for (int k : ks) h += ",pass@" + std::to_string(k);
  return h + ",kl_to_base";
}

std::string eval_report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.task_id << ',' << r.step << ',' << r.n << ',' << fmt(r.accuracy);
  for (double v : r.pass.values) os << ',' << fmt(v);
  os << ',' << fmt(r.kl_to_base);
  return os.str();
}

std::string plot_data_csv(const std::vector<PlotPoint>& points) {
  std::ostringstream os;
  os << "step,task,metric,value\n";
  for (const auto& p : points) os << p.step << ',' << p.task << ',' << p.metric << ',' << fmt(p.value) << '\n';
  return os.str();
}

}  // namespace sdft
