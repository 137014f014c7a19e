#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdft/estimators.hpp"
#include "sdft/metrics.hpp"
#include "sdft/optim.hpp"
#include "sdft/policy.hpp"
#include "sdft/tasks.hpp"

namespace sdft {

enum class TeacherMode { ema, frozen_base, current_student };
std::string to_string(TeacherMode m);
TeacherMode parse_teacher_mode(std::string_view name);

enum class Method { sdft, sft, offline_distill, teacher_sft };
std::string to_string(Method m);
// Accepts "sdft", "sft", "offline-distill", "teacher-sft"; throws ConfigError listing them otherwise.
Method parse_method(std::string_view name);

enum class SftTarget { answer, demonstration };
SftTarget parse_sft_target(std::string_view name);
std::string to_string(SftTarget t);

struct TrainConfig {
  Method method = Method::sdft;
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 2;
  int max_steps = -1;  // cap on optimizer updates; negative means no cap
  int warmup_steps = 10;
  int max_gen_len = 3;
  EstimatorId estimator = EstimatorId::analytic;
  TeacherMode teacher_mode = TeacherMode::ema;
  double alpha = 0.02;
  int mask_first_n = 0;
  std::optional<double> is_clip;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  AdamConfig adam;
  int eval_every = 25;
  SftTarget sft_target = SftTarget::answer;
  bool reset_teacher_per_task = true;
  int threads = 1;

  // Throws ConfigError naming the first field out of range.
  void validate() const;
};

struct TeacherState {
  TeacherMode mode = TeacherMode::ema;
  std::vector<double> phi;  // empty in current-student mode
  double alpha = 0.02;
};

// φ = θ for ema, φ = base for frozen-base, no φ for current-student.
TeacherState init_teacher(TeacherMode mode, const PolicyParams& student, const PolicyParams& base, double alpha);
// φ ← α·θ + (1−α)·φ
void ema_update(TeacherState& teacher, std::span<const double> theta, double alpha);
// The weights the teacher is evaluated with.
PolicyParams teacher_params(const TeacherState& teacher, const PolicyParams& student);

// w_t = exp(student_logprob − sampler_logprob), clipped to [1/clip, clip] when set.
std::vector<double> importance_weights(const Trajectory& traj, std::optional<double> clip);
// Zeroes positions 0..mask_first_n−1.
void apply_first_token_mask(std::span<double> per_token, int mask_first_n);

inline constexpr double kNotMeasured = std::numeric_limits<double>::quiet_NaN();

struct MetricRecord {
  std::int64_t step = 0;
  double loss = 0.0;  // mean stepwise-KL sum (distillation) or mean token NLL (imitation)
  double val_accuracy = kNotMeasured;
  double accuracy = kNotMeasured;  // new-task test accuracy
  double kl_to_base = kNotMeasured;
  double lr = 0.0;
  double wall_clock = 0.0;  // seconds since the run started; kept out of the metrics CSV
  int skipped = 0;
};

// step,loss,val_accuracy,accuracy,kl_to_base,lr,skipped (unmeasured fields left empty).
std::string metrics_csv(const std::vector<MetricRecord>& log);
// step,wall_clock
std::string timing_csv(const std::vector<MetricRecord>& log);

struct TrainerState {
  PolicyParams student;
  TeacherState teacher;
  AdamState adam;
  LrSchedule schedule;
  std::int64_t step = 0;          // optimizer updates applied so far, across phases
  std::int64_t phase_origin = 0;  // value of step when the current schedule started
};

TrainerState make_trainer_state(const PolicyParams& start, const PolicyParams& base, const TrainConfig& config,
                                std::int64_t total_steps);

// One SDFT update: a single on-policy rollout per instance, the configured estimator against the
// teacher under ⟨bos⟩ x ⟨sep⟩ c ⟨sep⟩, batch mean, AdamW step, then the EMA update.
MetricRecord sdft_step(TrainerState& state, std::span<const TaskInstance* const> batch, const TrainConfig& config);
// One SFT update on the configured target under the student prompt.
MetricRecord sft_step(TrainerState& state, std::span<const TaskInstance* const> batch, const TrainConfig& config);

// Fixed teacher samples for the offline baselines: one response per instance, drawn once from
// the base under the teacher prompt with stream derive_seed(seed, {i}).
std::vector<TokenSeq> gen_teacher_corpus(const std::vector<TaskInstance>& instances, const PolicyParams& base,
                                         const TrainConfig& config, std::uint64_t seed);

// Per-token KL from the student to the frozen base teacher along fixed trajectories.
MetricRecord offline_distill_step(TrainerState& state, std::span<const TaskInstance* const> batch,
                                  std::span<const TokenSeq* const> samples, const PolicyParams& base,
                                  const TrainConfig& config);
// Token NLL on fixed teacher samples.
MetricRecord teacher_sft_step(TrainerState& state, std::span<const TaskInstance* const> batch,
                              std::span<const TokenSeq* const> samples, const TrainConfig& config);

std::int64_t steps_per_epoch(std::size_t n_train, const TrainConfig& config);
std::int64_t planned_steps(std::size_t n_train, const TrainConfig& config);

// Called at every evaluation point with the record of the step just taken; fills eval fields.
using EvalHook = std::function<void(const TrainerState&, MetricRecord&)>;

// Trains one task phase with the given method, continuing from state. Evaluates after every
// eval_every-th update of the phase and after its last update. Returns the per-step log.
std::vector<MetricRecord> train_phase(TrainerState& state, Method method, const std::vector<TaskInstance>& train,
                                      const PolicyParams& base, const TrainConfig& config, const EvalHook& on_eval);

struct EvalSetup {
  std::vector<TokenSeq> kl_probes;  // prompts for KL-to-base; empty disables it
  int kl_max_len = 3;
  KlMode kl_mode = KlMode::exact;
  int kl_mc_samples = 0;
};

struct RunResult {
  PolicyParams policy;  // best-validation checkpoint (latest among ties)
  PolicyParams final_policy;
  std::vector<MetricRecord> log;
  std::int64_t best_step = 0;
  double best_val_accuracy = kNotMeasured;
};

RunResult run_sdft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                   const EvalSetup& eval = {});
RunResult run_sft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                  const EvalSetup& eval = {});
RunResult run_offline_distill(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                              const EvalSetup& eval = {});
RunResult run_teacher_sft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                          const EvalSetup& eval = {});
// Dispatches on config.method.
RunResult run_method(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                     const EvalSetup& eval = {});

struct SequentialTask {
  std::string name;
  TaskSplit data;
};

struct SequentialPlan {
  std::vector<SequentialTask> tasks;
  TrainConfig config;  // method, cadence and optimizer settings shared by every phase
};

struct SequentialResult {
  AccuracyMatrix matrix;         // test accuracy on every task at every evaluation point
  std::vector<double> kl_to_base;  // one per evaluation point (NaN when probes are disabled)
  std::vector<MetricRecord> log;
  PolicyParams final_policy;
};

// Trains the tasks in order without checkpoint selection; the optimizer state and schedule restart
// at each phase, and the teacher resets to the student when reset_teacher_per_task is set.
SequentialResult run_sequential(const SequentialPlan& plan, const PolicyParams& base, const EvalSetup& eval = {});

}  // namespace sdft
