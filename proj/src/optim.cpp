#include "sdft/optim.hpp"

#include <cmath>
#include <numbers>

#include "sdft/errors.hpp"

namespace sdft {

double clip_global_norm(GradientVector& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

void optimizer_step(std::vector<double>& theta, GradientVector grad, AdamState& state, const AdamConfig& config,
                    double lr) {
  if (grad.size() != theta.size()) throw InputError("optimizer_step: gradient length does not match parameters");
  if (!grad.finite()) throw DivergenceError("non-finite gradient at optimizer step " + std::to_string(state.step + 1));
  clip_global_norm(grad, config.max_grad_norm);
  if (state.m.empty()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    theta[i] -= lr * (mhat / (std::sqrt(vhat) + config.epsilon) + config.weight_decay * theta[i]);
  }
}

double lr_at(std::int64_t step, const LrSchedule& s) {
  if (step < 0) throw InputError("lr_at: negative step");
  if (step >= s.final_step) return 0.0;
  if (step < s.warmup_steps) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double frac =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.final_step - s.warmup_steps);
  return 0.5 * s.peak * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace sdft
