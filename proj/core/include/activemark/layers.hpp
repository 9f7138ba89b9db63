#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "activemark/tensor.hpp"

namespace activemark {

class Rng;

/// What a parameter is, as far as pruning and weight decay are concerned.
enum class ParamKind { weight, bias, norm, embedding };

struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::weight;
  Tensor value;
  bool frozen = false;
};

enum class LayerKind { linear, layernorm, attention, gelu, sigmoid, patchify, transformer_block };

std::string_view to_string(LayerKind kind) noexcept;

/// A layer with hand-written reverse mode.
///
/// forward() caches what backward() needs; backward() consumes the cache,
/// returns dL/dx and accumulates dL/dparam into each parameter's grad.
/// One forward enables exactly one backward.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const noexcept = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }

  void zero_grad();

 protected:
  Layer() = default;
  Layer(const Layer&) = default;
  Layer(Layer&&) = default;
  Layer& operator=(const Layer&) = default;
  Layer& operator=(Layer&&) = default;

  static const Tensor& take(const std::optional<Tensor>& cache, std::string_view layer);
};

/// y = x W + b over the last axis. W is stored [in x out].
class Linear final : public Layer {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, std::string name = "linear", bool bias = true);

  LayerKind kind() const noexcept override { return LayerKind::linear; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;

  std::size_t in_features() const noexcept { return in_; }
  bool has_bias() const noexcept { return has_bias_; }
  std::size_t out_features() const noexcept { return out_; }
  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  const Parameter& weight() const noexcept { return weight_; }
  const Parameter& bias() const noexcept { return bias_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = true;
  Parameter weight_;
  Parameter bias_;
  std::optional<Tensor> input_;
};

/// Layer normalisation over the last axis, eps = 1e-5.
class LayerNorm final : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width, std::string name = "norm");

  LayerKind kind() const noexcept override { return LayerKind::layernorm; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override { return {&gain_, &shift_}; }

 private:
  std::size_t width_ = 0;
  Parameter gain_;
  Parameter shift_;
  std::optional<Tensor> normalized_;
  std::vector<double> inv_std_;
};

/// Exact GELU: x * Phi(x).
class Gelu final : public Layer {
 public:
  LayerKind kind() const noexcept override { return LayerKind::gelu; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::optional<Tensor> input_;
};

class Sigmoid final : public Layer {
 public:
  LayerKind kind() const noexcept override { return LayerKind::sigmoid; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::optional<Tensor> output_;
};

/// Unmasked multi-head self-attention over a [tokens x width] input.
class MultiHeadAttention final : public Layer {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng, std::string name = "attn");

  LayerKind kind() const noexcept override { return LayerKind::attention; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;

  std::size_t heads() const noexcept { return heads_; }

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 0;
  Linear qkv_;         // fused projection, no bias of its own
  Parameter qv_bias_;  // [query | value] bias; a key bias would shift every score of a query equally
  Linear proj_;
  std::optional<Tensor> qkv_out_;
  std::vector<Tensor> probs_;  // one [T x T] per head
};

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;

  Shape as_shape() const { return {channels, height, width}; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Image [C x H x W] -> tokens [1 + (H/P)(W/P) x width]: a class token followed by
/// linearly projected non-overlapping P x P patches, plus a learned position table.
class Patchify final : public Layer {
 public:
  Patchify() = default;
  Patchify(ImageShape image, std::size_t patch, std::size_t width, Rng& rng, std::string name = "patchify");

  LayerKind kind() const noexcept override { return LayerKind::patchify; }
  Tensor forward(const Tensor& image) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;

  std::size_t tokens() const noexcept { return 1 + grid_h_ * grid_w_; }
  std::size_t patch_length() const noexcept { return image_.channels * patch_ * patch_; }

 private:
  Tensor to_patches(const Tensor& image) const;

  ImageShape image_;
  std::size_t patch_ = 0;
  std::size_t width_ = 0;
  std::size_t grid_h_ = 0;
  std::size_t grid_w_ = 0;
  Linear proj_;
  Parameter cls_;
  Parameter pos_;
  bool has_input_ = false;
};

/// Pre-norm transformer block: x + attn(ln1(x)), then + fc2(gelu(fc1(ln2(.)))).
class TransformerBlock final : public Layer {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_ratio, Rng& rng, std::string name);

  LayerKind kind() const noexcept override { return LayerKind::transformer_block; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;

  /// Output projection of the MLP; scaling it is how tests induce massive activations.
  Linear& mlp_out() noexcept { return fc2_; }

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Linear fc1_;
  Gelu act_;
  Linear fc2_;
  bool has_input_ = false;
};

}  // namespace activemark
