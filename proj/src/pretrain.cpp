#include "sdft/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdft/errors.hpp"
#include "sdft/metrics.hpp"
#include "sdft/parallel.hpp"

namespace sdft {

double document_nll(const PolicyParams& params, const TokenSeq& doc, std::span<double> grad, double scale) {
  const auto it = std::find(doc.rbegin(), doc.rend(), params.vocab.sep);
  if (it == doc.rend() || it == doc.rbegin()) throw InputError("document has no tokens after a separator");
  const std::span<const TokenId> all(doc);
  const std::size_t split = static_cast<std::size_t>(doc.rend() - it);
  return mean_nll(params, all.first(split), all.subspan(split), grad, scale);
}

PretrainResult pretrain_base(const Corpus& corpus, const Vocab& vocab, const PretrainConfig& config,
                             const ProgressFn& progress) {
  if (corpus.docs.empty()) throw InputError("pretrain_base: empty corpus");
  if (config.steps < 0 || config.batch_size < 1) throw ConfigError("pretrain: steps >= 0 and batch_size >= 1");
  PretrainResult res{config.init ? *config.init : init_policy(vocab, config.shape, derive_seed(config.seed, {0x696e6974})),
                     0.0, {}};
  PolicyParams& p = res.params;
  AdamState opt;
  const LrSchedule sched{config.learning_rate, config.warmup_steps, config.steps};

  std::vector<std::size_t> order(corpus.docs.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const std::size_t B = static_cast<std::size_t>(config.batch_size);
  std::vector<GradientVector> slots(B);
  std::vector<double> losses(B);

  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < B) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, {0x65706f6368, epoch++}));
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    parallel_for(B, config.threads, [&](std::size_t i) {
      slots[i] = GradientVector(p.size());
      losses[i] = document_nll(p, corpus.docs[batch[i]], slots[i].values, 1.0 / static_cast<double>(B));
    });
    GradientVector g(p.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      g += slots[i];
      loss += losses[i] / static_cast<double>(B);
    }
    if (!std::isfinite(loss)) throw DivergenceError("pretraining loss became non-finite at step " + std::to_string(step));
    if (step == 0) res.initial_loss = loss;
    res.batch_losses.push_back(loss);
    optimizer_step(p.theta, std::move(g), opt, config.adam, lr_at(step + 1, sched));
    if (progress) progress(step + 1, loss);
    if (config.stop_below > 0.0 && res.batch_losses.size() >= static_cast<std::size_t>(config.stop_window)) {
      const auto tail = std::span(res.batch_losses).last(static_cast<std::size_t>(config.stop_window));
      if (std::accumulate(tail.begin(), tail.end(), 0.0) / config.stop_window < config.stop_below) break;
    }
  }
  return res;
}

BaseResult pretrain_recipe(const BaseRecipe& r, const ProgressFn& progress) {
  r.layout.validate();
  const Corpus lookup = gen_meta_corpus(derive_seed(r.seed, {0x636f7270, 1}), r.n_tasks, r.instances_per_task, r.layout, 0.0);
  PretrainConfig cfg;
  cfg.shape = r.shape;
  cfg.steps = r.lookup_steps;
  cfg.batch_size = r.batch_size;
  cfg.learning_rate = r.lookup_lr;
  cfg.seed = derive_seed(r.seed, {1});
  cfg.threads = r.threads;
  cfg.stop_below = r.lookup_target_loss;
  PretrainResult first = pretrain_base(lookup, r.layout.vocab, cfg, progress);

  const Corpus mixed =
      gen_meta_corpus(derive_seed(r.seed, {0x636f7270, 2}), r.n_tasks, r.instances_per_task, r.layout, r.student_fraction);
  cfg.steps = r.mixed_steps;
  cfg.learning_rate = r.mixed_lr;
  cfg.seed = derive_seed(r.seed, {2});
  cfg.init = std::move(first.params);
  cfg.stop_below = 0.0;
  const int offset = static_cast<int>(first.batch_losses.size());
  PretrainResult second = pretrain_base(mixed, r.layout.vocab, cfg, [&](int step, double loss) {
    if (progress) progress(offset + step, loss);
  });
  BaseResult out{std::move(second.params), std::move(first.batch_losses), offset};
  out.batch_losses.insert(out.batch_losses.end(), second.batch_losses.begin(), second.batch_losses.end());
  return out;
}

IclGateReport icl_gate(const PolicyParams& base, const TaskLayout& layout, int n_tasks, int per_task,
                       std::uint64_t seed, double threshold, double slack, int threads) {
  std::vector<TaskInstance> probes;
  for (int k = 0; k < n_tasks; ++k) {
    Rng rng(derive_seed(seed, {0x67617465, static_cast<std::uint64_t>(k)}));
    const TokenId marker = layout.marker(static_cast<int>(rng.below(layout.n_markers)));
    const MappingTask task = make_mapping_task(layout, marker, rng.next(), "gate");
    const auto inst = gen_task_instances(task, layout, per_task, rng.next());
    probes.insert(probes.end(), inst.begin(), inst.end());
  }
  IclGateReport r;
  r.n = static_cast<int>(probes.size());
  r.conditioned = exact_match_accuracy(base, probes, PromptMode::teacher, threads);
  r.unconditioned = exact_match_accuracy(base, probes, PromptMode::student, threads);
  r.chance = 1.0 / static_cast<double>(layout.query_capacity());
  r.passed = r.conditioned >= threshold && r.unconditioned <= r.chance + slack;
  return r;
}

}  // namespace sdft
