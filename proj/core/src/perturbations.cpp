#include "activemark/perturbations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "activemark/errors.hpp"
#include "activemark/images.hpp"
#include "activemark/rng.hpp"

namespace activemark {

namespace {

std::vector<Parameter*> weight_parameters(ToyVfm& model) {
  std::vector<Parameter*> out;
  for (auto* p : model.parameters()) {
    if (p->kind == ParamKind::weight) out.push_back(p);
  }
  return out;
}

struct Sample {
  Tensor image;
  std::vector<std::size_t> labels;  // one for classification, one per patch for dense
};

std::vector<std::size_t> quadrant_labels(const Tensor& image, const ArchConfig& arch) {
  const auto& s = arch.image;
  const std::size_t p = arch.patch;
  const std::size_t half = std::max<std::size_t>(1, p / 2);
  std::vector<std::size_t> labels;
  for (std::size_t gy = 0; gy < s.height / p; ++gy) {
    for (std::size_t gx = 0; gx < s.width / p; ++gx) {
      double sums[4] = {0, 0, 0, 0};
      for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) {
            const std::size_t q = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
            sums[q] += image[(c * s.height + gy * p + y) * s.width + gx * p + x];
          }
        }
      }
      labels.push_back(static_cast<std::size_t>(std::max_element(sums, sums + 4) - sums));
    }
  }
  return labels;
}

std::vector<Sample> make_split(const DownstreamTask& task, const ArchConfig& arch, std::size_t per_class,
                               std::uint64_t salt) {
  std::vector<Sample> out;
  for (std::size_t c = 0; c < task.classes; ++c) {
    const std::uint64_t class_seed = derive_seed(task.seed, salt + c);
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto family = kImageFamilies[c % kImageFamilies.size()];
      Sample s;
      s.image = generate_image({family, derive_seed(class_seed, i), arch.image});
      if (task.kind == TaskKind::classification) {
        s.labels = {c};
      } else {
        s.labels = quadrant_labels(s.image, arch);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Softmax cross-entropy over the rows of `logits`; writes (p - onehot) * scale into grad.
double softmax_xent(const Tensor& logits, std::span<const std::size_t> labels, double scale, Tensor& grad,
                    std::size_t& correct) {
  const std::size_t rows = labels.size();
  const std::size_t k = logits.size() / rows;
  grad = Tensor(logits.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    loss += -(z[labels[r]] - zmax - std::log(denom));
    const std::size_t pred = static_cast<std::size_t>(std::max_element(z, z + k) - z);
    correct += pred == labels[r];
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - zmax) / denom;
      grad[r * k + j] = (p - (j == labels[r] ? 1.0 : 0.0)) * scale;
    }
  }
  return loss / static_cast<double>(rows);
}

Tensor patch_rows(const Tensor& tokens) {
  const std::size_t t = tokens.rows();
  const std::size_t h = tokens.cols();
  Tensor out({t - 1, h});
  std::copy(tokens.data().begin() + static_cast<std::ptrdiff_t>(h), tokens.data().end(), out.data().begin());
  return out;
}

}  // namespace

std::size_t prunable_weight_count(const ToyVfm& model) {
  std::size_t total = 0;
  for (const auto* p : model.parameters()) {
    if (p->kind == ParamKind::weight) total += p->value.size();
  }
  return total;
}

std::vector<std::size_t> smallest_magnitude_indices(std::span<const double> values, std::size_t count) {
  count = std::min(count, values.size());
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    return ma < mb || (ma == mb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), less);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void prune_values(std::span<double> values, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ArgumentError("prune: fraction must lie in [0, 1]");
  const auto count = std::min(values.size(), static_cast<std::size_t>(std::floor(fraction * double(values.size()))));
  for (std::size_t i : smallest_magnitude_indices(values, count)) values[i] = 0.0;
}

ToyVfm prune_l1(const ToyVfm& model, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ArgumentError("prune_l1: fraction must lie in [0, 1]");
  ToyVfm out = model;
  auto weights = weight_parameters(out);
  std::vector<double> flat;
  for (auto* p : weights) flat.insert(flat.end(), p->value.data().begin(), p->value.data().end());
  prune_values(flat, fraction);
  std::size_t offset = 0;
  for (auto* p : weights) {
    auto dst = p->value.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
  return out;
}

std::string_view to_string(TaskKind kind) noexcept {
  return kind == TaskKind::classification ? "classification" : "dense";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "dense") return TaskKind::dense;
  throw ConfigError("unknown task kind '" + std::string(name) + "' (expected classification or dense)");
}

void DownstreamTask::validate() const {
  if (kind == TaskKind::classification && (classes < 2 || classes > kImageFamilies.size())) {
    throw ArgumentError("classification task needs 2..4 classes");
  }
  if (kind == TaskKind::dense && classes != 4) throw ArgumentError("dense task has exactly 4 quadrant classes");
}

void FinetuneConfig::validate() const {
  if (epochs == 0) throw ArgumentError("finetune: epochs must be at least 1");
  if (batch_size == 0) throw ArgumentError("finetune: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ArgumentError("finetune: learning_rate must be positive");
  if (weight_decay < 0.0) throw ArgumentError("finetune: weight_decay must be non-negative");
}

FinetuneResult finetune_downstream(const ToyVfm& model, const DownstreamTask& task, const FinetuneConfig& cfg) {
  task.validate();
  cfg.validate();
  const ArchConfig& arch = model.config();
  FinetuneResult result{model, 0.0, 0.0, 0};
  ToyVfm& body = result.model;
  const auto mask = body.freeze_mask();
  body.unfreeze_all();

  const auto train = make_split(task, arch, task.train_per_class, 0);
  const auto test = make_split(task, arch, task.test_per_class, 1000);
  const bool dense = task.kind == TaskKind::dense;

  Rng head_rng(derive_seed(cfg.seed, 1));
  Linear head(dense ? arch.width : arch.embed_dim, task.classes, head_rng, "head");

  std::vector<Parameter*> params = body.parameters();
  for (auto* p : head.parameters()) params.push_back(p);

  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  OptimizerConfig ocfg;
  ocfg.kind = OptimizerKind::adamw;
  ocfg.learning_rate = cfg.learning_rate;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.schedule = cfg.scheduler;
  ocfg.total_steps = per_epoch * cfg.epochs;
  Optimizer optimizer(ocfg);
  Rng shuffle_rng(derive_seed(cfg.seed, 2));

  auto run = [&](const Sample& s, double scale, std::size_t& correct, bool learn) {
    auto out = body.forward_tokens(s.image);
    Tensor grad;
    double loss = 0.0;
    if (dense) {
      Tensor logits = head.forward(patch_rows(out.tokens));
      loss = softmax_xent(logits, s.labels, scale / double(s.labels.size()), grad, correct);
      if (learn) {
        Tensor d_patches = head.backward(grad);
        Tensor d_tokens(out.tokens.shape());
        std::copy(d_patches.data().begin(), d_patches.data().end(),
                  d_tokens.data().begin() + static_cast<std::ptrdiff_t>(arch.width));
        body.backward_tokens(d_tokens, Tensor{});
      }
    } else {
      Tensor logits = head.forward(out.embedding);
      loss = softmax_xent(logits, s.labels, scale, grad, correct);
      if (learn) body.backward_tokens(Tensor{}, head.backward(grad));
    }
    return loss;
  };

  try {
    for (std::size_t epoch = 0; epoch < cfg.epochs && !train.empty(); ++epoch) {
      const auto order = shuffle_rng.permutation(train.size());
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const double scale = 1.0 / double(stop - start);
        double loss = 0.0;
        std::size_t ignored = 0;
        for (std::size_t b = start; b < stop; ++b) loss += run(train[order[b]], scale, ignored, true) * scale;
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        optimizer.step(params);
        result.final_loss = loss;
        ++result.steps;
      }
    }
  } catch (const NumericError& e) {
    throw TrainingDiverged(result.steps, e.what());
  }

  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& s : test) {
    run(s, 1.0, correct, false);
    total += s.labels.size();
  }
  result.heldout_accuracy = total ? double(correct) / double(total) : 0.0;
  for (auto* p : body.parameters()) p->value.drop_grad();
  body.set_freeze_mask(mask);
  return result;
}

ToyVfm make_independent(const ArchConfig& arch, std::uint64_t seed,
                        const std::optional<std::pair<DownstreamTask, FinetuneConfig>>& finetune) {
  ToyVfm model(arch, seed);
  if (!finetune) return model;
  return finetune_downstream(model, finetune->first, finetune->second).model;
}

void PerturbationSpec::validate() const {
  switch (kind) {
    case Kind::prune_l1:
      if (!(fraction >= 0.0 && fraction <= 1.0)) throw ArgumentError("prune fraction must lie in [0, 1]");
      break;
    case Kind::finetune:
      task.validate();
      finetune.validate();
      break;
    case Kind::reinit:
    case Kind::distill:
      break;
  }
}

std::string_view to_string(PerturbationSpec::Kind kind) noexcept {
  switch (kind) {
    case PerturbationSpec::Kind::prune_l1: return "prune_l1";
    case PerturbationSpec::Kind::finetune: return "finetune";
    case PerturbationSpec::Kind::reinit: return "reinit";
    case PerturbationSpec::Kind::distill: return "distill";
  }
  return "prune_l1";
}

PerturbationSpec::Kind parse_perturbation_kind(std::string_view name) {
  for (auto k : {PerturbationSpec::Kind::prune_l1, PerturbationSpec::Kind::finetune, PerturbationSpec::Kind::reinit,
                 PerturbationSpec::Kind::distill}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown perturbation kind '" + std::string(name) + "'");
}

ToyVfm apply_perturbation(const ToyVfm& model, const PerturbationSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case PerturbationSpec::Kind::prune_l1: return prune_l1(model, spec.fraction);
    case PerturbationSpec::Kind::finetune: return finetune_downstream(model, spec.task, spec.finetune).model;
    case PerturbationSpec::Kind::reinit: return make_independent(model.config(), spec.seed);
    case PerturbationSpec::Kind::distill: break;
  }
  throw ArgumentError("distillation perturbations are not implemented");
}

}  // namespace activemark
