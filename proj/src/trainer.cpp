#include "sdft/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sdft/errors.hpp"
#include "sdft/parallel.hpp"
#include "sdft/rng.hpp"

namespace sdft {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kRollout = 0x726f6c6c;
constexpr std::uint64_t kShuffle = 0x73687566;
constexpr std::uint64_t kCorpus = 0x636f7270;

struct InstanceOutcome {
  GradientVector grad;
  double loss = 0.0;
  bool skipped = false;
};

// Averages per-instance outcomes, applies the optimizer and returns the step record.
MetricRecord apply_batch(TrainerState& state, std::vector<InstanceOutcome>& outcomes, const TrainConfig& config) {
  GradientVector g(state.student.size());
  double loss = 0.0;
  int used = 0, skipped = 0;
  for (auto& o : outcomes) {
    if (o.skipped) {
      ++skipped;
      continue;
    }
    g += o.grad;
    loss += o.loss;
    ++used;
  }
  MetricRecord rec;
  rec.skipped = skipped;
  const double lr = lr_at(state.step - state.phase_origin + 1, state.schedule);
  rec.lr = lr;
  if (used > 0) {
    g *= 1.0 / used;
    rec.loss = loss / used;
    if (!std::isfinite(rec.loss)) throw DivergenceError("training loss became non-finite at step " +
                                                        std::to_string(state.step + 1));
    optimizer_step(state.student.theta, std::move(g), state.adam, config.adam, lr);
  }
  ++state.step;
  rec.step = state.step;
  if (state.teacher.mode == TeacherMode::ema) ema_update(state.teacher, state.student.theta, state.teacher.alpha);
  return rec;
}

TokenSeq sft_target(const TaskInstance& inst, const Vocab& vocab, SftTarget which) {
  TokenSeq t = which == SftTarget::answer ? inst.answer : inst.c;
  t.push_back(vocab.eos);
  return t;
}

int context_of(const PolicyParams& p) {
  if (const auto* s = std::get_if<TransformerShape>(&p.shape)) return s->context;
  return 0;
}

}  // namespace

std::string to_string(TeacherMode m) {
  switch (m) {
    case TeacherMode::ema: return "ema";
    case TeacherMode::frozen_base: return "frozen-base";
    case TeacherMode::current_student: return "current-student";
  }
  return "?";
}

TeacherMode parse_teacher_mode(std::string_view name) {
  for (TeacherMode m : {TeacherMode::ema, TeacherMode::frozen_base, TeacherMode::current_student})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown teacher mode '" + std::string(name) + "' (valid: ema, frozen-base, current-student)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::sdft: return "sdft";
    case Method::sft: return "sft";
    case Method::offline_distill: return "offline-distill";
    case Method::teacher_sft: return "teacher-sft";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::sdft, Method::sft, Method::offline_distill, Method::teacher_sft})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "' (valid: sdft, sft, offline-distill, teacher-sft)");
}

SftTarget parse_sft_target(std::string_view name) {
  if (name == "answer") return SftTarget::answer;
  if (name == "demonstration") return SftTarget::demonstration;
  throw ConfigError("unknown sft target '" + std::string(name) + "' (valid: answer, demonstration)");
}

std::string to_string(SftTarget t) { return t == SftTarget::answer ? "answer" : "demonstration"; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train." + what); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (max_gen_len < 1) fail("max_gen_len must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must be in [0, 1]");
  if (mask_first_n < 0) fail("mask_first_n must be >= 0");
  if (is_clip && !(*is_clip >= 1.0)) fail("is_clip must be >= 1 or none");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (threads < 1) fail("threads must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    fail("beta1 and beta2 must be in [0, 1)");
  if (!(adam.epsilon > 0.0)) fail("epsilon must be > 0");
  if (adam.weight_decay < 0.0) fail("weight_decay must be >= 0");
}

TeacherState init_teacher(TeacherMode mode, const PolicyParams& student, const PolicyParams& base, double alpha) {
  if (student.size() != base.size()) throw InputError("student and base layouts differ");
  TeacherState t;
  t.mode = mode;
  t.alpha = alpha;
  if (mode == TeacherMode::ema) t.phi = student.theta;
  if (mode == TeacherMode::frozen_base) t.phi = base.theta;
  return t;
}

void ema_update(TeacherState& teacher, std::span<const double> theta, double alpha) {
  if (teacher.mode != TeacherMode::ema) throw Error("ema_update called on a non-EMA teacher");
  if (teacher.phi.size() != theta.size()) throw Error("ema_update: teacher and student lengths differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("ema_update: alpha must be in [0, 1]");
  for (std::size_t i = 0; i < theta.size(); ++i) teacher.phi[i] = alpha * theta[i] + (1.0 - alpha) * teacher.phi[i];
}

PolicyParams teacher_params(const TeacherState& teacher, const PolicyParams& student) {
  if (teacher.mode == TeacherMode::current_student) return student;
  return PolicyParams{student.vocab, student.shape, teacher.phi};
}

std::vector<double> importance_weights(const Trajectory& traj, std::optional<double> clip) {
  if (traj.student_logprobs.size() != traj.sampler_logprobs.size())
    throw InputError("importance_weights: logprob lists differ in length");
  std::vector<double> w(traj.student_logprobs.size());
  for (std::size_t t = 0; t < w.size(); ++t) {
    w[t] = std::exp(traj.student_logprobs[t] - traj.sampler_logprobs[t]);
    if (clip) w[t] = std::clamp(w[t], 1.0 / *clip, *clip);
  }
  return w;
}

void apply_first_token_mask(std::span<double> per_token, int mask_first_n) {
  if (mask_first_n < 0) throw InputError("mask_first_n must be >= 0");
  const std::size_t n = std::min(per_token.size(), static_cast<std::size_t>(mask_first_n));
  std::fill_n(per_token.begin(), n, 0.0);
}

std::string metrics_csv(const std::vector<MetricRecord>& log) {
  std::ostringstream os;
  os << "step,loss,val_accuracy,accuracy,kl_to_base,lr,skipped\n";
  auto opt = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
  for (const auto& r : log)
    os << r.step << ',' << fmt(r.loss) << ',' << opt(r.val_accuracy) << ',' << opt(r.accuracy) << ','
       << opt(r.kl_to_base) << ',' << fmt(r.lr) << ',' << r.skipped << '\n';
  return os.str();
}

std::string timing_csv(const std::vector<MetricRecord>& log) {
  std::ostringstream os;
  os << "step,wall_clock\n";
  for (const auto& r : log) os << r.step << ',' << fmt(r.wall_clock) << '\n';
  return os.str();
}

TrainerState make_trainer_state(const PolicyParams& start, const PolicyParams& base, const TrainConfig& config,
                                std::int64_t total_steps) {
  TrainerState s;
  s.student = start;
  s.teacher = init_teacher(config.teacher_mode, start, base, config.alpha);
  s.schedule = LrSchedule{config.learning_rate, config.warmup_steps, total_steps};
  return s;
}

MetricRecord sdft_step(TrainerState& state, std::span<const TaskInstance* const> batch, const TrainConfig& config) {
  if (batch.empty()) throw InputError("sdft_step: empty batch");
  const PolicyParams teacher = teacher_params(state.teacher, state.student);
  const PolicyParams& student = state.student;
  const Vocab& vocab = student.vocab;
  const int ctx = context_of(student);
  std::vector<InstanceOutcome> out(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const TaskInstance& inst = *batch[i];
    const TokenSeq sp = build_student_prompt(inst.x, vocab);
    const TokenSeq tp = build_teacher_prompt(inst.x, inst.c, vocab, ctx);
    Rng rng(derive_seed(config.seed, {kRollout, static_cast<std::uint64_t>(state.step), i}));
    const Trajectory traj = sample_response(student, sp, config.max_gen_len, config.temperature, rng);
    if (traj.response.empty()) {
      out[i].skipped = true;
      return;
    }
    std::vector<double> w = importance_weights(traj, config.is_clip);
    apply_first_token_mask(w, config.mask_first_n);
    const Estimate est = estimate(config.estimator, traj, student, ConditionedPolicy{teacher, tp}, w);
    out[i].grad = est.grad;
    out[i].loss = est.stepwise_kl_sum;
  });
  return apply_batch(state, out, config);
}

MetricRecord sft_step(TrainerState& state, std::span<const TaskInstance* const> batch, const TrainConfig& config) {
  if (batch.empty()) throw InputError("sft_step: empty batch");
  const PolicyParams& student = state.student;
  std::vector<InstanceOutcome> out(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const TaskInstance& inst = *batch[i];
    const TokenSeq target = sft_target(inst, student.vocab, config.sft_target);
    if (target.size() < 2) {
      out[i].skipped = true;
      return;
    }
    out[i].grad = GradientVector(student.size());
    out[i].loss = mean_nll(student, build_student_prompt(inst.x, student.vocab), target, out[i].grad.values);
  });
  return apply_batch(state, out, config);
}

std::vector<TokenSeq> gen_teacher_corpus(const std::vector<TaskInstance>& instances, const PolicyParams& base,
                                         const TrainConfig& config, std::uint64_t seed) {
  std::vector<TokenSeq> out(instances.size());
  const int ctx = context_of(base);
  parallel_for(instances.size(), config.threads, [&](std::size_t i) {
    const TokenSeq tp = build_teacher_prompt(instances[i].x, instances[i].c, base.vocab, ctx);
    Rng rng(derive_seed(seed, {i}));
    out[i] = sample_response(base, tp, config.max_gen_len, config.temperature, rng).response;
  });
  return out;
}

MetricRecord offline_distill_step(TrainerState& state, std::span<const TaskInstance* const> batch,
                                  std::span<const TokenSeq* const> samples, const PolicyParams& base,
                                  const TrainConfig& config) {
  if (batch.empty() || batch.size() != samples.size()) throw InputError("offline_distill_step: bad batch");
  const PolicyParams& student = state.student;
  const int ctx = context_of(student);
  std::vector<InstanceOutcome> out(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const TaskInstance& inst = *batch[i];
    if (samples[i]->empty()) {
      out[i].skipped = true;
      return;
    }
    Trajectory traj;
    traj.prompt = build_student_prompt(inst.x, student.vocab);
    traj.response = *samples[i];
    const TokenSeq tp = build_teacher_prompt(inst.x, inst.c, student.vocab, ctx);
    std::vector<double> w(traj.response.size(), 1.0);
    apply_first_token_mask(w, config.mask_first_n);
    const Estimate est = estimate(EstimatorId::analytic, traj, student, ConditionedPolicy{base, tp}, w);
    out[i].grad = est.grad;
    out[i].loss = est.stepwise_kl_sum;
  });
  return apply_batch(state, out, config);
}

MetricRecord teacher_sft_step(TrainerState& state, std::span<const TaskInstance* const> batch,
                              std::span<const TokenSeq* const> samples, const TrainConfig& config) {
  if (batch.empty() || batch.size() != samples.size()) throw InputError("teacher_sft_step: bad batch");
  const PolicyParams& student = state.student;
  std::vector<InstanceOutcome> out(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    if (samples[i]->empty()) {
      out[i].skipped = true;
      return;
    }
    out[i].grad = GradientVector(student.size());
    out[i].loss =
        mean_nll(student, build_student_prompt(batch[i]->x, student.vocab), *samples[i], out[i].grad.values);
  });
  return apply_batch(state, out, config);
}

std::int64_t steps_per_epoch(std::size_t n_train, const TrainConfig& config) {
  return (static_cast<std::int64_t>(n_train) + config.batch_size - 1) / config.batch_size;
}

std::int64_t planned_steps(std::size_t n_train, const TrainConfig& config) {
  std::int64_t total = steps_per_epoch(n_train, config) * config.epochs;
  if (config.max_steps >= 0) total = std::min<std::int64_t>(total, config.max_steps);
  return total;
}

std::vector<MetricRecord> train_phase(TrainerState& state, Method method, const std::vector<TaskInstance>& train,
                                      const PolicyParams& base, const TrainConfig& config, const EvalHook& on_eval) {
  config.validate();
  if (train.empty()) throw InputError("training set is empty");
  const std::int64_t total = planned_steps(train.size(), config);
  const std::int64_t phase_start = state.step;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<TokenSeq> corpus;
  if (method == Method::offline_distill || method == Method::teacher_sft)
    corpus = gen_teacher_corpus(train, base, config, derive_seed(config.seed, {kCorpus}));

  std::vector<std::size_t> order(train.size());
  std::vector<MetricRecord> log;
  std::int64_t done = 0;
  for (std::uint64_t epoch = 0; done < total; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, {kShuffle, static_cast<std::uint64_t>(phase_start), epoch}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size() && done < total; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const TaskInstance*> batch;
      std::vector<const TokenSeq*> samples;
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(&train[order[j]]);
        if (!corpus.empty()) samples.push_back(&corpus[order[j]]);
      }
      MetricRecord rec;
      switch (method) {
        case Method::sdft: rec = sdft_step(state, batch, config); break;
        case Method::sft: rec = sft_step(state, batch, config); break;
        case Method::offline_distill: rec = offline_distill_step(state, batch, samples, base, config); break;
        case Method::teacher_sft: rec = teacher_sft_step(state, batch, samples, config); break;
      }
      ++done;
      if (done % config.eval_every == 0 || done == total) {
        if (on_eval) on_eval(state, rec);
      }
      rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back(rec);
    }
  }
  return log;
}

namespace {

RunResult run_single(Method method, const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                     const EvalSetup& eval) {
  config.validate();
  RunResult res;
  res.policy = base;
  res.final_policy = base;
  if (data.train.empty()) throw InputError("training set is empty");
  TrainerState state = make_trainer_state(base, base, config, planned_steps(data.train.size(), config));
  bool have_best = false;
  const EvalHook hook = [&](const TrainerState& s, MetricRecord& rec) {
    if (!data.val.empty()) rec.val_accuracy = exact_match_accuracy(s.student, data.val, PromptMode::student, config.threads);
    if (!data.test.empty()) rec.accuracy = exact_match_accuracy(s.student, data.test, PromptMode::student, config.threads);
    if (!eval.kl_probes.empty())
      rec.kl_to_base = kl_to_base(s.student, base, eval.kl_probes, eval.kl_max_len, eval.kl_mode, eval.kl_mc_samples,
                                  derive_seed(config.seed, {0x6b6c, static_cast<std::uint64_t>(s.step)}),
                                  config.threads);
    const double v = std::isnan(rec.val_accuracy) ? 0.0 : rec.val_accuracy;
    if (!have_best || v >= res.best_val_accuracy) {
      have_best = true;
      res.best_val_accuracy = v;
      res.best_step = s.step;
      res.policy = s.student;
    }
  };
  if (planned_steps(data.train.size(), config) > 0) res.log = train_phase(state, method, data.train, base, config, hook);
  res.final_policy = state.student;
  return res;
}

}  // namespace

RunResult run_sdft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config, const EvalSetup& eval) {
  return run_single(Method::sdft, data, base, config, eval);
}

RunResult run_sft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config, const EvalSetup& eval) {
  return run_single(Method::sft, data, base, config, eval);
}

RunResult run_offline_distill(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                              const EvalSetup& eval) {
  return run_single(Method::offline_distill, data, base, config, eval);
}

RunResult run_teacher_sft(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                          const EvalSetup& eval) {
  return run_single(Method::teacher_sft, data, base, config, eval);
}

RunResult run_method(const TaskSplit& data, const PolicyParams& base, const TrainConfig& config,
                     const EvalSetup& eval) {
  return run_single(config.method, data, base, config, eval);
}

SequentialResult run_sequential(const SequentialPlan& plan, const PolicyParams& base, const EvalSetup& eval) {
  if (plan.tasks.empty()) throw InputError("sequential plan has no tasks");
  const TrainConfig& config = plan.config;
  config.validate();
  SequentialResult res;
  for (const auto& t : plan.tasks) {
    if (t.data.test.empty()) throw InputError("task '" + t.name + "' has no test instances");
    res.matrix.tasks.push_back(t.name);
  }

  auto evaluate = [&](const PolicyParams& policy, std::int64_t step, MetricRecord* rec) {
    std::vector<double> row;
    for (const auto& t : plan.tasks)
      row.push_back(exact_match_accuracy(policy, t.data.test, PromptMode::student, config.threads));
    double kl = kNotMeasured;
    if (!eval.kl_probes.empty())
      kl = kl_to_base(policy, base, eval.kl_probes, eval.kl_max_len, eval.kl_mode, eval.kl_mc_samples,
                      derive_seed(config.seed, {0x6b6c, static_cast<std::uint64_t>(step)}), config.threads);
    res.matrix.steps.push_back(step);
    res.matrix.acc.push_back(row);
    res.kl_to_base.push_back(kl);
    if (rec) rec->kl_to_base = kl;
  };

  PolicyParams current = base;
  evaluate(current, 0, nullptr);
  std::int64_t step = 0;
  TeacherState carried;
  for (std::size_t k = 0; k < plan.tasks.size(); ++k) {
    const auto& task = plan.tasks[k];
    TrainerState state = make_trainer_state(current, base, config, planned_steps(task.data.train.size(), config));
    state.step = step;
    state.phase_origin = step;
    if (k > 0 && !config.reset_teacher_per_task && config.teacher_mode == TeacherMode::ema) state.teacher = carried;
    res.matrix.phase_start.push_back(step + 1);
    const EvalHook hook = [&](const TrainerState& s, MetricRecord& rec) { evaluate(s.student, s.step, &rec); };
    auto log = train_phase(state, config.method, task.data.train, base, config, hook);
    res.log.insert(res.log.end(), log.begin(), log.end());
    step = state.step;
    current = state.student;
    carried = state.teacher;
  }
  res.final_policy = current;
  return res;
}

}  // namespace sdft
