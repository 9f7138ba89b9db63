#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "activemark/layers.hpp"

namespace activemark {

enum class OptimizerKind { adam, adamw };
enum class Schedule { constant, cosine, linear };

std::string_view to_string(OptimizerKind kind) noexcept;
std::string_view to_string(Schedule schedule) noexcept;
OptimizerKind parse_optimizer(std::string_view name);
Schedule parse_schedule(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // used by adamw only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Schedule schedule = Schedule::constant;
  std::size_t total_steps = 1;
};

/// Learning-rate multiplier at step t of T: constant 1, cosine (1+cos(pi t/T))/2, linear 1 - t/T.
double schedule_factor(Schedule schedule, std::size_t step, std::size_t total_steps);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One Adam/AdamW update of a flat parameter block. step_index counts from 0.
/// AdamW applies decoupled decay p *= 1 - lr_t * weight_decay before the Adam step.
void optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                    const OptimizerConfig& cfg, std::size_t step_index);

/// Adam over a list of Parameters; frozen ones are skipped entirely.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  /// Applies one update from each parameter's grad, then zeroes the grads.
  void step(std::span<Parameter* const> params);
  std::size_t steps_taken() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<AdamState> state_;
  std::size_t steps_ = 0;
};

}  // namespace activemark
