#include "activemark/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "activemark/errors.hpp"
#include "activemark/stats.hpp"

namespace activemark {

void TrainConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ArgumentError("train: lambda must be positive");
  if (batch_size == 0) throw ArgumentError("train: batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("train: learning_rate must be positive");
  if (!(encoder_lr_scale > 0.0) || !std::isfinite(encoder_lr_scale)) {
    throw ArgumentError("train: encoder_lr_scale must be positive");
  }
  if (weight_decay < 0.0) throw ArgumentError("train: weight_decay must be non-negative");
  if (n == 0 || N == 0) throw ArgumentError("train: n and N must be positive");
  if (tau && *tau >= n) throw ArgumentError("train: tau must be below n");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ArgumentError("train: epsilon must lie in (0, 1)");
  if (log_interval == 0) throw ArgumentError("train: log_interval must be positive");
}

void WatermarkKey::validate() const {
  if (triggers.size() != messages.size()) {
    throw FormatError("key: " + std::to_string(triggers.size()) + " trigger refs but " +
                      std::to_string(messages.size()) + " messages");
  }
  if (messages.empty()) throw FormatError("key: no triggers");
  for (const auto& m : messages) {
    if (m.size() != n) throw FormatError("key: message length differs from n");
  }
  if (tau >= n) throw FormatError("key: tau must be below n");
  if (encoder.h() != h || encoder.n() != n) throw FormatError("key: encoder widths do not match h, n");
  if (decoder.d() != d || decoder.n() != n) throw FormatError("key: decoder widths do not match d, n");
}

std::vector<Message> sample_messages(Rng& rng, std::size_t count, std::size_t n) {
  if (count == 0 || n == 0) throw ArgumentError("sample_messages: count and n must be positive");
  std::vector<Message> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::uint8_t> bits(n);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_u64() >> 63);
    out.emplace_back(std::move(bits));
  }
  return out;
}

std::vector<TriggerRef> synthetic_refs(std::span<const SyntheticImageSpec> specs, std::span<const Tensor> images) {
  if (specs.size() != images.size()) throw ArgumentError("synthetic_refs: spec and image counts differ");
  std::vector<TriggerRef> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    TriggerRef r;
    r.source = TriggerRef::Source::synthetic;
    r.spec = specs[i];
    r.digest = image_digest(images[i]);
    out.push_back(r);
  }
  return out;
}

TrainResult train_watermark(const ToyVfm& model, const TrainConfig& cfg, std::span<const Tensor> images,
                            std::vector<TriggerRef> refs) {
  cfg.validate();
  if (images.size() != cfg.N) {
    throw ArgumentError("train: expected " + std::to_string(cfg.N) + " trigger images, got " +
                        std::to_string(images.size()));
  }
  if (refs.empty()) {
    for (const auto& img : images) {
      TriggerRef r;
      r.source = TriggerRef::Source::file;
      r.digest = image_digest(img);
      refs.push_back(r);
    }
  }
  if (refs.size() != cfg.N) throw ArgumentError("train: trigger reference count differs from N");

  ToyVfm source = model;
  if (cfg.split) source.set_split(*cfg.split);
  const ArchConfig& arch = source.config();

  TrainResult result{WatermarkKey{}, source, {}};
  ToyVfm& marked = result.marked;
  marked.freeze_prefix();

  WatermarkKey& key = result.key;
  key.split = arch.split;
  key.n = cfg.n;
  key.d = arch.embed_dim;
  key.h = arch.width;
  key.triggers = std::move(refs);
  Rng message_rng(derive_seed(cfg.seed, 1));
  key.messages = sample_messages(message_rng, cfg.N, cfg.n);
  key.encoder = Encoder(arch.width, cfg.n, derive_seed(cfg.seed, 2));
  key.decoder = Decoder(arch.embed_dim, cfg.n, derive_seed(cfg.seed, 3));
  if (cfg.tau) {
    key.tau = *cfg.tau;
  } else {
    key.tau = select_threshold(cfg.n, 0.5, cfg.epsilon).value_or(0);
  }

  // The prefix is frozen, so p(x) and the original embedding f(x) are fixed targets.
  std::vector<Tensor> hidden;
  std::vector<Tensor> clean;
  hidden.reserve(images.size());
  clean.reserve(images.size());
  for (const auto& img : images) {
    SplitOutput out = source.forward(img);
    hidden.push_back(std::move(out.hidden));
    clean.push_back(std::move(out.embedding));
  }

  std::vector<Parameter*> encoder_params = key.encoder.parameters();
  std::vector<Parameter*> params = key.decoder.parameters();
  for (auto* p : marked.parameters()) params.push_back(p);

  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.learning_rate = cfg.learning_rate;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.schedule = cfg.scheduler;
  ocfg.total_steps = cfg.steps;
  Optimizer optimizer(ocfg);
  ocfg.learning_rate *= cfg.encoder_lr_scale;
  Optimizer encoder_optimizer(ocfg);

  Rng shuffle_rng(derive_seed(cfg.seed, 4));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::size_t batch = std::min(cfg.batch_size, cfg.N);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    HistoryRow row;
    row.step = step;
    const double scale = 1.0 / static_cast<double>(batch);
    try {
      for (std::size_t b = 0; b < batch; ++b) {
        if (cursor == order.size()) {
          order = shuffle_rng.permutation(cfg.N);
          cursor = 0;
        }
        const std::size_t i = order[cursor++];
        const Message& m = key.messages[i];

        // Fidelity: the marked model's own embedding of the clean input against f(x).
        Tensor u_marked = marked.suffix(hidden[i]);
        Tensor d_fidelity = fidelity_gradient(clean[i], u_marked);
        for (auto& g : d_fidelity.data()) g *= scale;
        marked.suffix_backward(d_fidelity);

        // Message: decode after injecting m into the class token.
        Tensor u_injected = marked.suffix(inject(key.encoder, hidden[i], m));
        SoftMessage soft = key.decoder.decode(u_injected);
        WatermarkLoss terms = watermark_loss_terms(clean[i], u_marked, m, soft, cfg.lambda);

        for (auto& g : terms.d_soft) g *= scale;
        Tensor d_hidden = marked.suffix_backward(key.decoder.backward(terms.d_soft));
        key.encoder.backward(d_hidden.row_copy(0));

        row.loss += terms.total * scale;
        row.fidelity += terms.fidelity * scale;
        row.message_l1 += terms.message_l1 * scale;
        row.bit_error += static_cast<double>(hamming(binarize(soft), m)) * scale;
      }
      if (!std::isfinite(row.loss)) throw NumericError("non-finite loss");
      encoder_optimizer.step(encoder_params);
      optimizer.step(params);
    } catch (const NumericError& e) {
      throw TrainingDiverged(step, e.what());
    }
    if (step % cfg.log_interval == 0 || step + 1 == cfg.steps) result.history.push_back(row);
  }
  for (auto* p : encoder_params) p->value.drop_grad();
  for (auto* p : params) p->value.drop_grad();
  return result;
}

}  // namespace activemark
