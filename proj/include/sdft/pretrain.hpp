#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sdft/optim.hpp"
#include "sdft/policy.hpp"
#include "sdft/tasks.hpp"

namespace sdft {

struct PretrainConfig {
  TransformerShape shape;
  int steps = 3000;
  int batch_size = 32;
  double learning_rate = 3e-3;
  int warmup_steps = 100;
  AdamConfig adam{0.9, 0.98, 1e-8, 0.0, 1.0};
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<PolicyParams> init;  // warm start; a fresh transformer when unset
  double stop_below = 0.0;  // stop early once the mean loss of the last stop_window batches drops below this
  int stop_window = 50;
};

// Mean next-token NLL over the positions after the document's last ⟨sep⟩ (the answer and
// ⟨eos⟩). When grad is non-empty, adds scale·∇ of that mean into it.
double document_nll(const PolicyParams& params, const TokenSeq& doc, std::span<double> grad = {},
                    double scale = 1.0);

struct PretrainResult {
  PolicyParams params;
  double initial_loss = 0.0;  // mean document NLL on the first batch before any update
  std::vector<double> batch_losses;
};

using ProgressFn = std::function<void(int step, double loss)>;

// Next-token training of a fresh (or warm-started) transformer on the corpus. Documents are visited in a per-epoch
// shuffled order; per-document gradients are summed in batch order, so the result does not
// depend on threads. Throws DivergenceError on a non-finite loss.
PretrainResult pretrain_base(const Corpus& corpus, const Vocab& vocab, const PretrainConfig& config,
                             const ProgressFn& progress = {});

// Two-stage recipe for the in-context base. The lookup stage trains on demonstration-conditioned
// documents only, since bare-prompt documents stall the formation of the retrieval circuit. The
// mixed stage then adds bare-prompt documents so the base also answers in format without a
// demonstration. Each stage draws its own corpus of fresh mappings.
struct BaseRecipe {
  TaskLayout layout;
  TransformerShape shape{32, 2, 2, 32, 4};
  int n_tasks = 20000;
  int instances_per_task = 8;
  int lookup_steps = 8000;  // cap; the stage ends once its loss drops below lookup_target_loss
  double lookup_lr = 3e-3;
  double lookup_target_loss = 0.02;
  int mixed_steps = 1000;
  double mixed_lr = 1e-3;
  double student_fraction = 0.25;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct BaseResult {
  PolicyParams params;
  std::vector<double> batch_losses;  // both stages, in order
  int lookup_steps_taken = 0;
};

// Progress steps count across both stages.
BaseResult pretrain_recipe(const BaseRecipe& recipe, const ProgressFn& progress = {});

struct IclGateReport {
  double conditioned = 0.0;    // greedy exact match with the demonstration in context
  double unconditioned = 0.0;  // same queries, bare prompt
  double chance = 0.0;
  int n = 0;
  bool passed = false;
};

// Evaluates the base on fresh mappings it has never seen.
IclGateReport icl_gate(const PolicyParams& base, const TaskLayout& layout, int n_tasks, int per_task,
                       std::uint64_t seed, double threshold = 0.90, double slack = 0.05, int threads = 1);

}  // namespace sdft
