#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "activemark/layers.hpp"
#include "activemark/tensor.hpp"

namespace activemark {

struct ArchConfig {
  ImageShape image{1, 16, 16};
  std::size_t patch = 4;
  std::size_t width = 32;      // h, hidden width
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t blocks = 6;      // B
  std::size_t embed_dim = 32;  // d
  std::size_t split = 3;       // num: prefix is blocks 1..split

  std::size_t tokens() const noexcept { return 1 + (image.height / patch) * (image.width / patch); }
  /// Throws ArgumentError on an unusable configuration.
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Forward pass split at a block boundary.
struct SplitOutput {
  Tensor hidden;     // [T x h], output of block `split` (input to the suffix)
  Tensor embedding;  // [d]
};

/// Small ViT-style feature model f = q o p.
///
/// p = patchify + blocks 1..split, q = blocks split+1..B + final norm + a linear
/// readout of the class token. Blocks are numbered from 1 in the public API.
class ToyVfm {
 public:
  ToyVfm(const ArchConfig& config, std::uint64_t seed);

  const ArchConfig& config() const noexcept { return config_; }
  std::size_t split() const noexcept { return config_.split; }
  void set_split(std::size_t split);

  /// p(x) at the configured split, or at an explicit one.
  Tensor prefix(const Tensor& image);
  Tensor prefix(const Tensor& image, std::size_t split);
  /// q(hidden). Caches activations so suffix_backward() can follow.
  Tensor suffix(const Tensor& hidden);
  Tensor suffix(const Tensor& hidden, std::size_t split);
  /// dL/d(embedding) -> dL/d(hidden); accumulates suffix parameter grads.
  Tensor suffix_backward(const Tensor& d_embedding);

  SplitOutput forward(const Tensor& image);
  /// Unsplit reference forward: readout(norm(blocks(patchify(x)))).
  Tensor embed(const Tensor& image);

  /// Full forward exposing the final normalised tokens [T x h] alongside the embedding.
  struct TokensOutput {
    Tensor tokens;
    Tensor embedding;
  };
  TokensOutput forward_tokens(const Tensor& image);
  /// Backward for forward_tokens(). Either gradient may be empty.
  void backward_tokens(const Tensor& d_tokens, const Tensor& d_embedding);

  /// Output of every block (after the residual add), blocks 1..B.
  std::vector<Tensor> block_outputs(const Tensor& image);

  /// All parameters in declaration order (the checkpoint payload order).
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<bool> freeze_mask() const;
  void set_freeze_mask(const std::vector<bool>& mask);
  /// Freezes patchify and blocks 1..split; everything else trainable.
  void freeze_prefix();
  void unfreeze_all();
  void zero_grad();

  /// Parameters of q (blocks split+1..B, final norm, readout).
  std::vector<Parameter*> suffix_parameters();

  TransformerBlock& block(std::size_t one_based);

 private:
  void check_split(std::size_t split) const;

  ArchConfig config_;
  Patchify patchify_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Linear readout_;
  std::size_t cached_from_ = 0;  // first block (0-based) of the last cached pass
  bool suffix_cached_ = false;
};

struct ActivationProfile {
  std::vector<double> per_block;  // index 0 is block 1
  std::size_t k = 5;
  std::size_t image_count = 0;
};

/// Per block, per image: mean of the k largest |activation| over all tokens and
/// channels of the block output; then the mean over images.
ActivationProfile profile_activations(ToyVfm& model, std::span<const Tensor> images, std::size_t k);

/// Mean of the k largest absolute values of one activation tensor.
double mean_top_k_magnitude(std::span<const double> values, std::size_t k);

struct BlockSelection {
  std::size_t block = 0;    // one-based
  bool clear_onset = false;  // false: no block passed the ratio test, `block` is the argmax
};

/// First block i >= 2 whose profile value reaches ratio x median(blocks 1..i-1).
BlockSelection select_expressive_block(const ActivationProfile& profile, double ratio);

}  // namespace activemark
