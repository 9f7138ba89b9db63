#include "activemark/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "activemark/errors.hpp"

namespace activemark {

std::string_view to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::adam ? "adam" : "adamw";
}

std::string_view to_string(Schedule schedule) noexcept {
  switch (schedule) {
    case Schedule::constant: return "constant";
    case Schedule::cosine: return "cosine";
    case Schedule::linear: return "linear";
  }
  return "constant";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adam or adamw)");
}

Schedule parse_schedule(std::string_view name) {
  if (name == "constant") return Schedule::constant;
  if (name == "cosine") return Schedule::cosine;
  if (name == "linear") return Schedule::linear;
  throw ConfigError("unknown scheduler '" + std::string(name) + "' (expected constant, cosine or linear)");
}

double schedule_factor(Schedule schedule, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return 1.0;
  const double t = std::min(static_cast<double>(step), static_cast<double>(total_steps));
  const double frac = t / static_cast<double>(total_steps);
  switch (schedule) {
    case Schedule::constant: return 1.0;
    case Schedule::cosine: return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    case Schedule::linear: return 1.0 - frac;
  }
  return 1.0;
}

void optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                    const OptimizerConfig& cfg, std::size_t step_index) {
  if (params.size() != grads.size()) throw ShapeError("optimizer_step: parameter/gradient length mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer_step: state length mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("optimizer_step: non-finite gradient");
  }
  const double lr = cfg.learning_rate * schedule_factor(cfg.schedule, step_index, cfg.total_steps);
  const double t = static_cast<double>(step_index + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const bool decay = cfg.kind == OptimizerKind::adamw && cfg.weight_decay != 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (decay) params[i] *= 1.0 - lr * cfg.weight_decay;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void Optimizer::step(std::span<Parameter* const> params) {
  if (state_.empty()) state_.resize(params.size());
  if (state_.size() != params.size()) throw StateError("optimizer: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.frozen) {
      p.value.drop_grad();
      continue;
    }
    optimizer_step(p.value.data(), p.value.grad(), state_[i], cfg_, steps_);
    p.value.zero_grad();
  }
  ++steps_;
}

}  // namespace activemark
