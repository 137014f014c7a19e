#include <iostream>

#include "CLI11.hpp"
#include "sdft/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Self-distillation fine-tuning laboratory"};
  app.require_subcommand(1);
  sdft::RunOptions opts;
  std::string config, out;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string method;

  struct Spec {
    const char* name;
    const char* help;
    bool method;
  };
  const Spec specs[] = {
      {"pretrain", "Train the in-context base model and check the ICL gate", false},
      {"train", "Fine-tune the base on a new task with one method", true},
      {"eval", "Accuracy, pass@k and KL-to-base for a checkpoint", false},
      {"ablate-estimators", "Bias and variance of the KL gradient estimators on a tabular fixture", false},
      {"sequential", "Train tasks in sequence and report forgetting", true},
  };
  for (const Spec& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Run seed (overrides run.seed)");
    sub->add_option("--out", out, "Output root (overrides run.out)");
    sub->add_option("--threads", threads, "Worker threads (overrides run.threads)")->check(CLI::PositiveNumber);
    sub->add_option("--set", opts.overrides, "Override a config key, as section.key=value");
    if (s.method) sub->add_option("--method", method, "sdft, sft, offline-distill or teacher-sft");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : sdft::kExitUserError;
  }

  CLI::App* sub = app.get_subcommands().front();
  opts.command = sub->get_name();
  if (sub->count("--config")) opts.config_path = config;
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--out")) opts.out = out;
  if (sub->count("--threads")) opts.threads = threads;
  if (sub->get_option_no_throw("--method") && sub->count("--method")) opts.method = method;
  return sdft::run_command(opts, std::cout, std::cerr).exit_code;
}
