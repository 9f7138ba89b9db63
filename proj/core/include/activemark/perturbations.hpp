#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "activemark/optim.hpp"
#include "activemark/toy_vfm.hpp"

namespace activemark {

/// Number of entries across all ParamKind::weight tensors (the pruning population).
std::size_t prunable_weight_count(const ToyVfm& model);

/// Indices of the `count` smallest |values|, ties broken by ascending index, sorted ascending.
std::vector<std::size_t> smallest_magnitude_indices(std::span<const double> values, std::size_t count);

/// Zeroes the floor(fraction * size) smallest-magnitude entries in place.
void prune_values(std::span<double> values, double fraction);

/// Global unstructured magnitude pruning over every weight matrix of the model.
/// Biases, norm parameters and embeddings are left alone.
ToyVfm prune_l1(const ToyVfm& model, double fraction);

enum class TaskKind { classification, dense };
std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view name);

/// Synthetic downstream task.
///
/// classification: label = generator family of the image, K = classes (2..4).
/// dense: every patch token is labelled with the quadrant of the patch that has
/// the highest mean intensity, so K = 4.
struct DownstreamTask {
  TaskKind kind = TaskKind::classification;
  std::size_t classes = 4;
  std::size_t train_per_class = 16;
  std::size_t test_per_class = 8;
  std::uint64_t seed = 11;

  void validate() const;
};

struct FinetuneConfig {
  Schedule scheduler = Schedule::constant;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::uint64_t seed = 13;

  void validate() const;
};

struct FinetuneResult {
  ToyVfm model;              // body only; the head is discarded
  double heldout_accuracy = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

/// Fine-tunes all layers plus a fresh linear head with AdamW and the chosen scheduler.
FinetuneResult finetune_downstream(const ToyVfm& model, const DownstreamTask& task, const FinetuneConfig& cfg);

/// Freshly initialised model with no lineage from any watermarked one, optionally fine-tuned.
ToyVfm make_independent(const ArchConfig& arch, std::uint64_t seed,
                        const std::optional<std::pair<DownstreamTask, FinetuneConfig>>& finetune = std::nullopt);

/// Declarative description of one perturbation, as stored in suspect manifests.
struct PerturbationSpec {
  enum class Kind { prune_l1, finetune, reinit, distill };
  Kind kind = Kind::prune_l1;
  double fraction = 0.0;        // prune_l1
  DownstreamTask task;          // finetune
  FinetuneConfig finetune;      // finetune
  std::uint64_t seed = 0;       // reinit
  std::string applies_to;       // model identifier

  void validate() const;
};

std::string_view to_string(PerturbationSpec::Kind kind) noexcept;
PerturbationSpec::Kind parse_perturbation_kind(std::string_view name);

/// Applies the spec. reinit ignores `model` apart from its architecture;
/// distill throws ArgumentError (not implemented).
ToyVfm apply_perturbation(const ToyVfm& model, const PerturbationSpec& spec);

}  // namespace activemark
