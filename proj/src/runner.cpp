#include "sdft/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "json.hpp"
#include "sdft/checkpoint.hpp"
#include "sdft/errors.hpp"
#include "sdft/estimators.hpp"
#include "sdft/metrics.hpp"
#include "sdft/rng.hpp"

namespace sdft {

namespace fs = std::filesystem;

TaskLayout read_layout(Config& c) {
  TaskLayout L;
  L.n_markers = c.get_int("layout.n_markers", L.n_markers);
  L.n_content = c.get_int("layout.n_content", L.n_content);
  L.query_len = c.get_int("layout.query_len", L.query_len);
  L.distractors = c.get_int("layout.distractors", L.distractors);
  L.echo_keys = c.get_bool("layout.echo_keys", L.echo_keys);
  L.expert_echo_keys = c.get_bool("layout.expert_echo_keys", L.expert_echo_keys);
  if (L.n_markers < 1 || L.n_content < 1) throw ConfigError("layout needs at least one marker and one content token");
  L.first_marker = 4;
  L.first_content = L.first_marker + L.n_markers;
  L.vocab = Vocab{L.first_content + L.n_content, 1, 2, 0, 3};
  L.validate();
  return L;
}

TransformerShape read_shape(Config& c) {
  TransformerShape s = BaseRecipe{}.shape;
  s.dim = c.get_int("model.dim", s.dim);
  s.layers = c.get_int("model.layers", s.layers);
  s.heads = c.get_int("model.heads", s.heads);
  s.context = c.get_int("model.context", s.context);
  s.mlp_ratio = c.get_int("model.mlp_ratio", s.mlp_ratio);
  s.smeared_keys = c.get_bool("model.smeared_keys", s.smeared_keys);
  return s;
}

BaseRecipe read_recipe(Config& c, const TaskLayout& layout, std::uint64_t seed, int threads) {
  BaseRecipe r;
  r.layout = layout;
  r.shape = read_shape(c);
  r.n_tasks = c.get_int("pretrain.n_tasks", r.n_tasks);
  r.instances_per_task = c.get_int("pretrain.instances_per_task", r.instances_per_task);
  r.lookup_steps = c.get_int("pretrain.lookup_steps", r.lookup_steps);
  r.lookup_lr = c.get_double("pretrain.lookup_lr", r.lookup_lr);
  r.lookup_target_loss = c.get_double("pretrain.lookup_target_loss", r.lookup_target_loss);
  r.mixed_steps = c.get_int("pretrain.mixed_steps", r.mixed_steps);
  r.mixed_lr = c.get_double("pretrain.mixed_lr", r.mixed_lr);
  r.student_fraction = c.get_double("pretrain.student_fraction", r.student_fraction);
  r.batch_size = c.get_int("pretrain.batch_size", r.batch_size);
  r.seed = seed;
  r.threads = threads;
  if (r.n_tasks < 1 || r.instances_per_task < 1 || r.batch_size < 1 || r.lookup_steps < 0 || r.mixed_steps < 0)
    throw ConfigError("pretrain sizes must be positive");
  if (r.shape.context < layout.teacher_prompt_len() + layout.response_len())
    throw ConfigError("model.context is shorter than a teacher-format document");
  return r;
}

TrainConfig read_train_config(Config& c, std::uint64_t seed, int threads) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 16;
  t.epochs = 30;
  t.max_gen_len = 5;
  t.method = parse_method(c.get_string("train.method", to_string(t.method)));
  t.learning_rate = c.get_double("train.learning_rate", t.learning_rate);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.epochs = c.get_int("train.epochs", t.epochs);
  t.max_steps = c.get_int("train.max_steps", t.max_steps);
  t.warmup_steps = c.get_int("train.warmup_steps", t.warmup_steps);
  t.max_gen_len = c.get_int("train.max_gen_len", t.max_gen_len);
  t.estimator = parse_estimator(c.get_string("train.estimator", to_string(t.estimator)));
  t.teacher_mode = parse_teacher_mode(c.get_string("train.teacher_mode", to_string(t.teacher_mode)));
  t.alpha = c.get_double("train.alpha", t.alpha);
  t.mask_first_n = c.get_int("train.mask_first_n", t.mask_first_n);
  t.is_clip = c.get_optional_double("train.is_clip", t.is_clip);
  t.temperature = c.get_double("train.temperature", t.temperature);
  t.eval_every = c.get_int("train.eval_every", t.eval_every);
  t.sft_target = parse_sft_target(c.get_string("train.sft_target", to_string(t.sft_target)));
  t.reset_teacher_per_task = c.get_bool("train.reset_teacher_per_task", t.reset_teacher_per_task);
  t.adam.weight_decay = c.get_double("train.weight_decay", t.adam.weight_decay);
  t.adam.max_grad_norm = c.get_double("train.max_grad_norm", t.adam.max_grad_norm);
  t.seed = seed;
  t.threads = threads;
  t.validate();
  return t;
}

TaskSplit make_split(const TaskSpec& spec, const TaskLayout& layout) {
  if (spec.marker < 0 || spec.marker >= layout.n_markers)
    throw ConfigError("task marker " + std::to_string(spec.marker) + " is outside the layout");
  const MappingTask task = make_mapping_task(layout, layout.marker(spec.marker), spec.seed, spec.name);
  return split_task(task, layout, spec.n_train, spec.n_test, spec.val_fraction, derive_seed(spec.seed, {0x73706c}));
}

ProbeSpec read_probes(Config& c) {
  ProbeSpec p;
  p.marker = c.get_int("probes.marker", p.marker);
  p.n_tasks = c.get_int("probes.n_tasks", p.n_tasks);
  p.per_task = c.get_int("probes.per_task", p.per_task);
  p.seed = c.get_u64("probes.seed", p.seed);
  p.kl_mode = c.get_string("probes.kl_mode", p.kl_mode);
  p.mc_samples = c.get_int("probes.mc_samples", p.mc_samples);
  parse_kl_mode(p.kl_mode);
  if (p.n_tasks < 0 || p.per_task < 1) throw ConfigError("probes.n_tasks must be >= 0 and probes.per_task >= 1");
  return p;
}

std::vector<TaskInstance> probe_instances(const ProbeSpec& spec, const TaskLayout& layout) {
  if (spec.marker < 0 || spec.marker >= layout.n_markers)
    throw ConfigError("probes.marker " + std::to_string(spec.marker) + " is outside the layout");
  std::vector<TaskInstance> out;
  for (int k = 0; k < spec.n_tasks; ++k) {
    const std::uint64_t s = derive_seed(spec.seed, {0x70726f, static_cast<std::uint64_t>(k)});
    const MappingTask t = make_mapping_task(layout, layout.marker(spec.marker), s, "probe" + std::to_string(k));
    const auto inst = gen_task_instances(t, layout, spec.per_task, s);
    out.insert(out.end(), inst.begin(), inst.end());
  }
  return out;
}

EvalSetup probe_eval_setup(const ProbeSpec& spec, const TaskLayout& layout) {
  EvalSetup e;
  for (const TaskInstance& i : probe_instances(spec, layout)) e.kl_probes.push_back(build_teacher_prompt(i.x, i.c, layout.vocab));
  e.kl_max_len = layout.response_len();
  e.kl_mode = parse_kl_mode(spec.kl_mode);
  e.kl_mc_samples = spec.mc_samples;
  return e;
}

std::string run_id_for(const std::string& command, const Config& config) {
  std::string text = "command = " + command + "\n";
  for (const auto& [k, v] : config.resolved())
    if (k != "run.threads" && k != "run.out") text += k + " = " + v + "\n";
  return hex64(fnv1a64(text)).substr(0, 12);
}

namespace {

class GateFailure : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

PolicyParams load_checked(const std::string& path, const TaskLayout& layout, const char* key) {
  if (path.empty()) throw ConfigError(std::string("config key '") + key + "' is required");
  PolicyParams p = load_policy(path);
  if (!(p.vocab == layout.vocab))
    throw ConfigError(std::string(key) + " " + path + " has vocabulary size " + std::to_string(p.vocab.size) +
                      ", the layout needs " + std::to_string(layout.vocab.size));
  return p;
}

std::string summary_csv(const std::string& method, const RunResult& r, double icl_accuracy) {
  double best_acc = kNotMeasured;
  for (const MetricRecord& m : r.log)
    if (m.step == r.best_step) best_acc = m.accuracy;
  const MetricRecord last = r.log.empty() ? MetricRecord{} : r.log.back();
  auto f = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
  return "method,best_step,best_val_accuracy,best_accuracy,final_step,final_accuracy,final_kl_to_base,"
         "final_icl_accuracy\n" +
         method + "," + std::to_string(r.best_step) + "," + f(r.best_val_accuracy) + "," + f(best_acc) + "," +
         std::to_string(last.step) + "," + f(last.accuracy) + "," + f(last.kl_to_base) + "," + f(icl_accuracy) + "\n";
}

std::vector<PlotPoint> training_plot(const std::vector<MetricRecord>& log, const std::string& task) {
  std::vector<PlotPoint> pts;
  for (const MetricRecord& m : log) {
    pts.push_back({m.step, task, "loss", m.loss});
    if (!std::isnan(m.val_accuracy)) pts.push_back({m.step, task, "val_accuracy", m.val_accuracy});
    if (!std::isnan(m.accuracy)) pts.push_back({m.step, task, "accuracy", m.accuracy});
    if (!std::isnan(m.kl_to_base)) pts.push_back({m.step, task, "kl_to_base", m.kl_to_base});
  }
  return pts;
}

// Everything a command needs once its configuration is resolved.
struct Session {
  std::string command;
  Config config;
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out_root;
  std::string run_id;
  fs::path dir;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::ostream* log = nullptr;

  // Rejects unread keys, fixes the run id and creates the run directory.
  void open() {
    config.check_all_used();
    run_id = run_id_for(command, config);
    dir = out_root / run_id;
    fs::create_directories(dir);
    *log << command << " run " << run_id << " -> " << dir.string() << "\n";
  }

  void emit(const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    outputs.push_back(name);
  }

  void save(const std::string& name, const PolicyParams& p) {
    save_policy(p, dir / name);
    outputs.push_back(name);
  }

  void write_manifest(const std::string& config_path, const std::string& status) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["run_id"] = run_id;
    m["config_path"] = config_path;
    m["seed"] = seed;
    m["status"] = status;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    nlohmann::ordered_json resolved = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config.resolved()) resolved[k] = v;
    m["config"] = resolved;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
  }
};

void cmd_pretrain(Session& s) {
  Config& c = s.config;
  const TaskLayout layout = read_layout(c);
  const BaseRecipe recipe = read_recipe(c, layout, s.seed, s.threads);
  const int gate_tasks = c.get_int("gate.n_tasks", 50);
  const int gate_per_task = c.get_int("gate.per_task", 4);
  const std::uint64_t gate_seed = c.get_u64("gate.seed", derive_seed(s.seed, {0x67617465}));
  const double threshold = c.get_double("gate.threshold", 0.90);
  const double slack = c.get_double("gate.slack", 0.05);
  const int report_every = c.get_int("pretrain.report_every", 500);
  s.open();

  std::ostream& log = *s.log;
  const auto t0 = std::chrono::steady_clock::now();
  const BaseResult base = pretrain_recipe(recipe, [&](int step, double loss) {
    if (report_every > 0 && step % report_every == 0) log << "  step " << step << " loss " << fmt(loss) << "\n";
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.save("base.ckpt", base.params);
  std::string losses = "step,loss\n";
  for (std::size_t i = 0; i < base.batch_losses.size(); ++i)
    losses += std::to_string(i + 1) + "," + fmt(base.batch_losses[i]) + "\n";
  s.emit("pretrain_loss.csv", losses);
  s.emit("timing.csv", "phase,wall_clock\npretrain," + fmt(seconds) + "\n");

  const IclGateReport g = icl_gate(base.params, layout, gate_tasks, gate_per_task, gate_seed, threshold, slack, s.threads);
  s.emit("gate.csv", "conditioned,unconditioned,chance,n,lookup_steps,passed\n" + fmt(g.conditioned) + "," +
                         fmt(g.unconditioned) + "," + fmt(g.chance) + "," + std::to_string(g.n) + "," +
                         std::to_string(base.lookup_steps_taken) + "," + (g.passed ? "true" : "false") + "\n");
  log << "ICL gate: conditioned " << fmt(g.conditioned) << " (need >= " << fmt(threshold) << "), unconditioned "
      << fmt(g.unconditioned) << " (need <= chance " << fmt(g.chance) << " + " << fmt(slack) << "), n " << g.n
      << (g.passed ? ", passed\n" : ", FAILED\n");
  if (!g.passed) throw GateFailure("ICL gate not met");
}

void cmd_train(Session& s) {
  Config& c = s.config;
  const TaskLayout layout = read_layout(c);
  const std::string base_path = c.get_string("base.checkpoint", "");
  TaskSpec spec;
  spec.name = c.get_string("task.name", spec.name);
  spec.marker = c.get_int("task.marker", spec.marker);
  spec.seed = c.get_u64("task.seed", s.seed);
  spec.n_train = c.get_int("task.n_train", spec.n_train);
  spec.n_test = c.get_int("task.n_test", spec.n_test);
  spec.val_fraction = c.get_double("task.val_fraction", spec.val_fraction);
  const TrainConfig tc = read_train_config(c, s.seed, s.threads);
  const ProbeSpec probes = read_probes(c);
  const PolicyParams base = load_checked(base_path, layout, "base.checkpoint");
  s.inputs.push_back(base_path);
  s.open();

  const TaskSplit data = make_split(spec, layout);
  const EvalSetup eval = probes.n_tasks > 0 ? probe_eval_setup(probes, layout) : EvalSetup{};
  *s.log << to_string(tc.method) << ": " << data.train.size() << " train, " << data.val.size() << " val, "
         << data.test.size() << " test, " << planned_steps(data.train.size(), tc) << " steps\n";
  const RunResult r = run_method(data, base, tc, eval);
  const double icl = probes.n_tasks > 0
                         ? exact_match_accuracy(r.final_policy, probe_instances(probes, layout), PromptMode::teacher, s.threads)
                         : kNotMeasured;
  s.save("policy.ckpt", r.policy);
  s.save("final.ckpt", r.final_policy);
  s.emit("metrics.csv", metrics_csv(r.log));
  s.emit("timing.csv", timing_csv(r.log));
  s.emit("plot_data.csv", plot_data_csv(training_plot(r.log, spec.name)));
  const std::string summary = summary_csv(to_string(tc.method), r, icl);
  s.emit("summary.csv", summary);
  *s.log << summary;
}

void cmd_eval(Session& s) {
  Config& c = s.config;
  const TaskLayout layout = read_layout(c);
  const std::string ckpt_path = c.get_string("eval.checkpoint", "");
  const std::string base_path = c.get_string("base.checkpoint", "");
  const std::string dataset = c.get_string("eval.dataset", "");
  const std::string split = c.get_string("eval.split", "test");
  const std::string mode_name = c.get_string("eval.mode", "student");
  const int n_samples = c.get_int("eval.pass_samples", 128);
  const std::vector<int> ks = c.get_int_list("eval.pass_k", {1, 8, 64, 128});
  const std::uint64_t pass_seed = c.get_u64("eval.pass_seed", derive_seed(s.seed, {0x7061737}));
  TaskSpec spec;
  if (dataset.empty()) {
    spec.name = c.get_string("task.name", spec.name);
    spec.marker = c.get_int("task.marker", spec.marker);
    spec.seed = c.get_u64("task.seed", s.seed);
    spec.n_train = c.get_int("task.n_train", spec.n_train);
    spec.n_test = c.get_int("task.n_test", spec.n_test);
    spec.val_fraction = c.get_double("task.val_fraction", spec.val_fraction);
  }
  const ProbeSpec probes = read_probes(c);
  if (mode_name != "student" && mode_name != "teacher")
    throw ConfigError("config key 'eval.mode': expected student or teacher, got '" + mode_name + "'");
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("config key 'eval.split': expected train, val or test, got '" + split + "'");
  const PolicyParams policy = load_checked(ckpt_path, layout, "eval.checkpoint");
  s.inputs.push_back(ckpt_path);
  std::optional<PolicyParams> base;
  if (probes.n_tasks > 0) {
    base = load_checked(base_path, layout, "base.checkpoint");
    s.inputs.push_back(base_path);
  }
  std::vector<TaskInstance> instances;
  if (!dataset.empty()) {
    instances = load_dataset(dataset);
    s.inputs.push_back(dataset);
  }
  s.open();

  std::string task_id = dataset.empty() ? spec.name : fs::path(dataset).stem().string();
  if (dataset.empty()) {
    const TaskSplit data = make_split(spec, layout);
    instances = split == "train" ? data.train : split == "val" ? data.val : data.test;
  }
  if (instances.empty()) throw InputError("no instances to evaluate");
  for (const TaskInstance& i : instances) {
    check_tokens(layout.vocab, i.x);
    check_tokens(layout.vocab, i.c);
    check_tokens(layout.vocab, i.answer);
  }
  const PromptMode mode = mode_name == "teacher" ? PromptMode::teacher : PromptMode::student;
  EvalReport r;
  r.task_id = task_id;
  r.n = static_cast<int>(instances.size());
  r.accuracy = exact_match_accuracy(policy, instances, mode, s.threads);
  r.pass = pass_at_k_table(policy, instances, mode, n_samples, ks, pass_seed, s.threads);
  if (base) {
    const EvalSetup e = probe_eval_setup(probes, layout);
    r.kl_to_base = kl_to_base(policy, *base, e.kl_probes, e.kl_max_len, e.kl_mode, e.kl_mc_samples,
                              derive_seed(s.seed, {0x6b6c}), s.threads);
  } else {
    r.kl_to_base = kNotMeasured;
  }
  const std::string csv = eval_report_csv_header(ks) + "\n" + eval_report_csv_row(r) + "\n";
  s.emit("eval.csv", csv);
  *s.log << csv;
}

PolicyParams random_table(int vocab_size, int window, double spread, std::uint64_t seed) {
  PolicyParams p = init_policy(Vocab{vocab_size, 1, 2, 0, 3}, TabularShape{window}, seed);
  Rng rng(seed);
  for (double& v : p.theta) v = spread * (2.0 * rng.uniform() - 1.0);
  return p;
}

void cmd_ablate(Session& s) {
  Config& c = s.config;
  const int vocab_size = c.get_int("ablate.vocab_size", 5);
  const int window = c.get_int("ablate.window", 1);
  const int max_len = c.get_int("ablate.max_len", 3);
  const int n_samples = c.get_int("ablate.n_samples", 100000);
  const double spread = c.get_double("ablate.spread", 1.5);
  const std::uint64_t student_seed = c.get_u64("ablate.student_seed", 1);
  const std::uint64_t teacher_seed = c.get_u64("ablate.teacher_seed", 2);
  const std::uint64_t budget = c.get_u64("ablate.budget", kDefaultEnumerationBudget);
  if (vocab_size < 4 || max_len < 1 || n_samples < 2) throw ConfigError("ablate needs vocab_size >= 4, max_len >= 1, n_samples >= 2");
  s.open();
  check_enumeration_budget(vocab_size, max_len, budget);

  const PolicyParams student = random_table(vocab_size, window, spread, student_seed);
  const PolicyParams teacher = random_table(vocab_size, window, spread, teacher_seed);
  const TokenSeq student_prompt{1}, teacher_prompt{1, 3};
  const ConditionedPolicy view{teacher, teacher_prompt};
  const GradientVector oracle = sequence_kl_grad_exact(student, teacher, student_prompt, teacher_prompt, max_len, budget);
  std::string csv = stats_csv_header() + "\n";
  for (EstimatorId id : kAllEstimators) {
    Rng rng(derive_seed(s.seed, {static_cast<std::uint64_t>(id)}));
    const EstimatorStats st = estimator_stats(id, student, view, student_prompt, max_len, n_samples, rng, s.threads);
    const GradientVector expected = expected_estimate(id, student, view, student_prompt, max_len, budget);
    csv += stats_csv_row(id, st, oracle, expected) + "\n";
  }
  s.emit("estimators.csv", csv);
  *s.log << csv;
}

void cmd_sequential(Session& s) {
  Config& c = s.config;
  const TaskLayout layout = read_layout(c);
  const std::string base_path = c.get_string("base.checkpoint", "");
  const std::vector<int> markers = c.get_int_list("sequential.markers", {0, 1, 2});
  const std::uint64_t task_seed = c.get_u64("sequential.seed", s.seed);
  const int n_train = c.get_int("sequential.n_train", 80);
  const int n_test = c.get_int("sequential.n_test", 40);
  SequentialPlan plan;
  plan.config = read_train_config(c, s.seed, s.threads);
  const ProbeSpec probes = read_probes(c);
  if (markers.size() < 2) throw ConfigError("config key 'sequential.markers': need at least two tasks");
  const PolicyParams base = load_checked(base_path, layout, "base.checkpoint");
  s.inputs.push_back(base_path);
  s.open();

  for (std::size_t k = 0; k < markers.size(); ++k) {
    TaskSpec spec;
    spec.name = "task" + std::to_string(k + 1);
    spec.marker = markers[k];
    spec.seed = derive_seed(task_seed, {0x736571, k});
    spec.n_train = n_train;
    spec.n_test = n_test;
    spec.val_fraction = 0.0;
    plan.tasks.push_back({spec.name, make_split(spec, layout)});
  }
  const EvalSetup eval = probes.n_tasks > 0 ? probe_eval_setup(probes, layout) : EvalSetup{};
  const SequentialResult r = run_sequential(plan, base, eval);
  const std::vector<double> forgetting = forgetting_scores(r.matrix);

  std::string header, row;
  for (std::size_t k = 0; k < forgetting.size(); ++k) {
    header += (k ? "," : "") + r.matrix.tasks[k];
    row += (k ? "," : "") + fmt(forgetting[k]);
  }
  std::vector<PlotPoint> pts;
  for (std::size_t i = 0; i < r.matrix.steps.size(); ++i) {
    for (std::size_t k = 0; k < r.matrix.tasks.size(); ++k)
      pts.push_back({r.matrix.steps[i], r.matrix.tasks[k], "accuracy", r.matrix.acc[i][k]});
    if (!std::isnan(r.kl_to_base[i])) pts.push_back({r.matrix.steps[i], "probes", "kl_to_base", r.kl_to_base[i]});
  }
  s.emit("matrix.csv", accuracy_matrix_csv(r.matrix));
  s.emit("forgetting.csv", header + "\n" + row + "\n");
  s.emit("plot_data.csv", plot_data_csv(pts));
  s.emit("metrics.csv", metrics_csv(r.log));
  s.emit("timing.csv", timing_csv(r.log));
  s.save("final.ckpt", r.final_policy);
  *s.log << accuracy_matrix_csv(r.matrix) << "forgetting: " << header << "\n             " << row << "\n";
}

}  // namespace

CommandResult run_command(const RunOptions& options, std::ostream& out, std::ostream& err) {
  CommandResult result;
  Session s;
  s.command = options.command;
  s.log = &out;
  const std::string config_path = options.config_path ? options.config_path->string() : "";
  bool opened = false;
  try {
    if (std::find(kCommands.begin(), kCommands.end(), s.command) == kCommands.end())
      throw ConfigError("unknown command '" + s.command + "'");
    if (options.config_path) s.config = Config::from_file(*options.config_path);
    for (const std::string& kv : options.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(' '), e = v.find_last_not_of(' ');
        return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
      };
      s.config.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (options.seed) s.config.set("run.seed", std::to_string(*options.seed));
    if (options.threads) s.config.set("run.threads", std::to_string(*options.threads));
    if (options.out) s.config.set("run.out", options.out->string());
    if (options.method) {
      if (s.command != "train" && s.command != "sequential")
        throw ConfigError("--method applies to train and sequential only");
      parse_method(*options.method);
      s.config.set("train.method", *options.method);
    }
    s.seed = s.config.get_u64("run.seed", 0);
    s.threads = s.config.get_int("run.threads", 1);
    s.out_root = s.config.get_string("run.out", "runs");
    if (s.threads < 1) throw ConfigError("config key 'run.threads': expected a positive integer");
    if (options.config_path) s.inputs.push_back(config_path);

    if (s.command == "pretrain") cmd_pretrain(s);
    else if (s.command == "train") cmd_train(s);
    else if (s.command == "eval") cmd_eval(s);
    else if (s.command == "ablate-estimators") cmd_ablate(s);
    else cmd_sequential(s);
    opened = true;
    s.write_manifest(config_path, "ok");
  } catch (const GateFailure& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = kExitGateFailure;
  } catch (const BudgetError& e) {
    err << "error: enumeration budget exceeded: " << e.what() << "\n";
    result.exit_code = kExitGateFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    result.exit_code = kExitUserError;
  }
  if (!s.run_id.empty()) {
    result.run_id = s.run_id;
    result.run_dir = s.dir;
    if (!opened) {
      try {
        s.write_manifest(config_path, "exit " + std::to_string(result.exit_code));
      } catch (const std::exception&) {
      }
    }
  }
  return result;
}

}  // namespace sdft
