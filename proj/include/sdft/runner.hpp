#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sdft/config.hpp"
#include "sdft/pretrain.hpp"
#include "sdft/trainer.hpp"

namespace sdft {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitGateFailure = 2;

inline const std::vector<std::string> kCommands{"pretrain", "train", "eval", "ablate-estimators", "sequential"};

// Command-line flags. overrides ("key=value", as from --set) replace config-file values, and the
// dedicated flags then override run.seed, run.threads, run.out and train.method.
struct RunOptions {
  std::string command;
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<int> threads;
  std::optional<std::string> method;
};

struct CommandResult {
  int exit_code = kExitOk;
  std::string run_id;
  std::filesystem::path run_dir;  // empty when the command failed before creating it
};

// Runs one command. Progress and reports go to out, error messages to err.
// Artifacts land in <run.out>/<run id>/ next to manifest.json.
CommandResult run_command(const RunOptions& options, std::ostream& out, std::ostream& err);

// Config readers. Each records the values it used in the Config so they reach the manifest.

// [layout] n_markers, n_content, query_len, distractors, echo_keys, expert_echo_keys.
// Specials take ids 0..3, markers follow, then content tokens.
TaskLayout read_layout(Config& config);
// [model] dim, layers, heads, context, mlp_ratio, smeared_keys
TransformerShape read_shape(Config& config);
// [pretrain] plus [model]
BaseRecipe read_recipe(Config& config, const TaskLayout& layout, std::uint64_t seed, int threads);
// [train]
TrainConfig read_train_config(Config& config, std::uint64_t seed, int threads);

struct TaskSpec {
  std::string name = "task";
  int marker = 0;  // marker index, not token id
  std::uint64_t seed = 0;
  int n_train = 80;
  int n_test = 40;
  double val_fraction = 0.05;
};
TaskSplit make_split(const TaskSpec& spec, const TaskLayout& layout);

// Capability probes on a marker the fine-tuning tasks leave alone: fresh mappings posed with
// their demonstrations. KL-to-base is measured on their teacher-format prompts.
struct ProbeSpec {
  int marker = 3;
  int n_tasks = 4;
  int per_task = 4;
  std::uint64_t seed = 1;
  std::string kl_mode = "mc";
  int mc_samples = 64;
};
// [probes]
ProbeSpec read_probes(Config& config);
std::vector<TaskInstance> probe_instances(const ProbeSpec& spec, const TaskLayout& layout);
EvalSetup probe_eval_setup(const ProbeSpec& spec, const TaskLayout& layout);

// Run id: FNV-1a over the command and the resolved configuration, leaving out keys that
// cannot change results (run.threads, run.out).
std::string run_id_for(const std::string& command, const Config& config);

}  // namespace sdft
