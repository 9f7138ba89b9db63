#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "activemark/codec.hpp"
#include "activemark/images.hpp"
#include "activemark/optim.hpp"
#include "activemark/rng.hpp"
#include "activemark/toy_vfm.hpp"

namespace activemark {

struct TrainConfig {
  double lambda = 1.0;
  std::size_t steps = 500;  // 0 is accepted and leaves everything untouched
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  /// Learning-rate multiplier for the encoder. Its output reaches the decoder only
  /// through the suffix and the final norm, so at the shared rate the decoder fits
  /// image features before a message channel forms and some bits lock in wrong.
  double encoder_lr_scale = 10.0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double weight_decay = 0.0;
  Schedule scheduler = Schedule::cosine;
  std::uint64_t seed = 1;
  std::size_t n = 8;   // message length
  std::size_t N = 32;  // trigger count
  /// Split to train at; the model's current split when empty.
  std::optional<std::size_t> split;
  /// Bit-error threshold written into the key; chosen by select_threshold(n, 0.5, epsilon) when empty.
  std::optional<std::size_t> tau;
  double epsilon = 1e-4;
  std::size_t log_interval = 1;

  void validate() const;
};

/// Where a trigger image came from: a synthetic spec, or a file identified by its digest.
struct TriggerRef {
  enum class Source { synthetic, file };
  Source source = Source::synthetic;
  SyntheticImageSpec spec;  // synthetic only
  std::string path;         // file only
  std::uint64_t digest = 0; // image_digest of the pixels

  friend bool operator==(const TriggerRef&, const TriggerRef&) = default;
};

/// Everything the owner needs to run verification.
struct WatermarkKey {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  std::vector<TriggerRef> triggers;
  std::vector<Message> messages;
  Encoder encoder;
  Decoder decoder;
  std::size_t split = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t tau = 0;

  std::size_t N() const noexcept { return messages.size(); }
  /// Throws FormatError when the counts or widths disagree.
  void validate() const;
};

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double fidelity = 0.0;    // mean embedding drift ||u_clean - u_marked||
  double message_l1 = 0.0;  // mean sum_i |m_i - soft_i|
  double bit_error = 0.0;   // mean wrong bits per image after binarisation
};

struct TrainResult {
  WatermarkKey key;
  ToyVfm marked;
  std::vector<HistoryRow> history;
};

std::vector<Message> sample_messages(Rng& rng, std::size_t count, std::size_t n);

/// Jointly trains encoder, decoder and the suffix of a copy of `model`.
/// The prefix is frozen and stays bit-identical. images.size() and refs.size() must equal cfg.N;
/// empty refs are filled with digest-only file references.
TrainResult train_watermark(const ToyVfm& model, const TrainConfig& cfg, std::span<const Tensor> images,
                            std::vector<TriggerRef> refs = {});

/// Triggers for a key built from synthetic specs.
std::vector<TriggerRef> synthetic_refs(std::span<const SyntheticImageSpec> specs, std::span<const Tensor> images);

}  // namespace activemark
