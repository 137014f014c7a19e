#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdft/policy.hpp"
#include "sdft/tasks.hpp"

namespace sdft {

// Which prompt an instance is posed with: the bare query or query plus demonstration.
enum class PromptMode { student, teacher };

TokenSeq prompt_for(const TaskInstance& inst, const Vocab& vocab, PromptMode mode);

// answer ⧺ ⟨eos⟩ followed by each also_accept rendering ⧺ ⟨eos⟩.
std::vector<TokenSeq> accepted_responses(const TaskInstance& inst, const Vocab& vocab);
bool is_accepted(const std::vector<TokenSeq>& accepted, const TokenSeq& response);

// Fraction of instances whose greedy decode equals an accepted response token for token.
double exact_match_accuracy(const PolicyParams& policy, const std::vector<TaskInstance>& instances,
                            PromptMode mode = PromptMode::student, int threads = 1);

// 1 − C(n−c, k)/C(n, k), evaluated as a product in log space.
double pass_at_k(int n, int c, int k);

struct PassAtK {
  std::vector<int> ks;
  std::vector<double> values;  // mean over instances, one per k
};

// n samples per instance at temperature 1; sample j of instance i uses derive_seed(seed, {i, j}).
PassAtK pass_at_k_table(const PolicyParams& policy, const std::vector<TaskInstance>& instances, PromptMode mode,
                        int n_samples, const std::vector<int>& ks, std::uint64_t seed, int threads = 1);

enum class KlMode { exact, mc };
KlMode parse_kl_mode(const std::string& name);

// Mean over probe prompts of the sequence-level KL(policy ‖ base) over responses up to max_len.
// exact sums the chain rule over every reachable prefix; mc averages ln π(y) − ln π_base(y)
// over mc_samples draws y ~ π per probe.
double kl_to_base(const PolicyParams& policy, const PolicyParams& base, const std::vector<TokenSeq>& probes,
                  int max_len, KlMode mode = KlMode::exact, int mc_samples = 0, std::uint64_t seed = 0,
                  int threads = 1);

// (acc − base_acc)/(max_acc − base_acc); throws InputError unless max_acc > base_acc.
double normalized_score(double acc, double base_acc, double max_acc);

// Rows are evaluation points, columns tasks. phase_start[j] is the first step of task j's
// training phase; rows before it are ignored when taking the peak.
struct AccuracyMatrix {
  std::vector<std::string> tasks;
  std::vector<std::int64_t> steps;
  std::vector<std::vector<double>> acc;
  std::vector<std::int64_t> phase_start;
};

// Per task: peak accuracy from its phase onward minus final accuracy.
std::vector<double> forgetting_scores(const AccuracyMatrix& m);

std::string accuracy_matrix_csv(const AccuracyMatrix& m);

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int n = 0;
};
// Mean with a two-sided 95% Student-t interval; needs at least two values.
MeanCi mean_ci95(const std::vector<double>& values);
double median(std::vector<double> values);
double sample_variance(const std::vector<double>& values);

struct EvalReport {
  std::string task_id;
  std::int64_t step = 0;
  int n = 0;
  double accuracy = 0.0;
  PassAtK pass;
  double kl_to_base = 0.0;
};

std::string eval_report_csv_header(const std::vector<int>& ks);
std::string eval_report_csv_row(const EvalReport& r);

// Long-format rows for external plotting.
struct PlotPoint {
  std::int64_t step;
  std::string task;
  std::string metric;
  double value;
};
std::string plot_data_csv(const std::vector<PlotPoint>& points);

// Fixed-precision formatting used by every CSV writer so files are byte-stable.
std::string fmt(double v);

}  // namespace sdft
