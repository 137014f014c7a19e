#pragma once

#include <cstdint>
#include <vector>

#include "sdft/policy.hpp"

namespace sdft {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

// Scales grad in place so its global norm is at most max_norm. Returns the norm before scaling.
double clip_global_norm(GradientVector& grad, double max_norm);

// AdamW: clip, update moments, bias-correct, then θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ).
// Throws DivergenceError on a non-finite gradient, leaving theta and state untouched.
void optimizer_step(std::vector<double>& theta, GradientVector grad, AdamState& state, const AdamConfig& config,
                    double lr);

// Linear warmup from 0 to peak over warmup_steps, then cosine decay reaching 0 at final_step.
struct LrSchedule {
  double peak = 1e-3;
  std::int64_t warmup_steps = 10;
  std::int64_t final_step = 100;
};

double lr_at(std::int64_t step, const LrSchedule& schedule);

}  // namespace sdft
