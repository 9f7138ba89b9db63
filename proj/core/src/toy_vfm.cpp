#include "activemark/toy_vfm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "activemark/errors.hpp"
#include "activemark/rng.hpp"

namespace activemark {

void ArchConfig::validate() const {
  if (image.channels == 0 || image.height == 0 || image.width == 0) throw ArgumentError("image extents must be positive");
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ArgumentError("image extents must be multiples of the patch size");
  }
  if (width == 0 || heads == 0 || width % heads != 0) throw ArgumentError("width must be a positive multiple of heads");
  if (mlp_ratio == 0 || embed_dim == 0) throw ArgumentError("mlp_ratio and embed_dim must be positive");
  if (blocks < 2) throw ArgumentError("need at least two blocks to split the model");
  if (split < 1 || split >= blocks) {
    throw ArgumentError("split index must lie in [1, blocks-1], got " + std::to_string(split));
  }
}

ToyVfm::ToyVfm(const ArchConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  patchify_ = Patchify(config_.image, config_.patch, config_.width, rng, "patchify");
  blocks_.reserve(config_.blocks);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    blocks_.emplace_back(config_.width, config_.heads, config_.mlp_ratio, rng, "blocks." + std::to_string(b + 1));
  }
  final_norm_ = LayerNorm(config_.width, "final_norm");
  readout_ = Linear(config_.width, config_.embed_dim, rng, "readout");
}

void ToyVfm::check_split(std::size_t split) const {
  if (split < 1 || split >= config_.blocks) {
    throw ArgumentError("split index must lie in [1, " + std::to_string(config_.blocks - 1) + "], got " +
                        std::to_string(split));
  }
}

void ToyVfm::set_split(std::size_t split) {
  check_split(split);
  config_.split = split;
}

Tensor ToyVfm::prefix(const Tensor& image) { return prefix(image, config_.split); }

Tensor ToyVfm::prefix(const Tensor& image, std::size_t split) {
  check_split(split);
  Tensor x = patchify_.forward(image);
  for (std::size_t b = 0; b < split; ++b) x = blocks_[b].forward(x);
  return x;
}

Tensor ToyVfm::suffix(const Tensor& hidden) { return suffix(hidden, config_.split); }

Tensor ToyVfm::suffix(const Tensor& hidden, std::size_t split) {
  check_split(split);
  if (hidden.rank() != 2 || hidden.rows() != config_.tokens() || hidden.cols() != config_.width) {
    throw ShapeError("suffix: hidden representation must be [tokens x width]");
  }
  Tensor x = hidden;
  for (std::size_t b = split; b < blocks_.size(); ++b) x = blocks_[b].forward(x);
  Tensor normed = final_norm_.forward(x);
  Tensor out = readout_.forward(normed.row_copy(0));
  cached_from_ = split;
  suffix_cached_ = true;
  return out;
}

Tensor ToyVfm::suffix_backward(const Tensor& d_embedding) {
  if (!suffix_cached_) throw StateError("suffix_backward called without a matching suffix forward");
  Tensor d_cls = readout_.backward(d_embedding);
  Tensor d({config_.tokens(), config_.width});
  std::copy(d_cls.data().begin(), d_cls.data().end(), d.row(0).begin());
  d = final_norm_.backward(d);
  for (std::size_t b = blocks_.size(); b-- > cached_from_;) d = blocks_[b].backward(d);
  suffix_cached_ = false;
  return d;
}

SplitOutput ToyVfm::forward(const Tensor& image) {
  SplitOutput out;
  out.hidden = prefix(image);
  out.embedding = suffix(out.hidden);
  return out;
}

Tensor ToyVfm::embed(const Tensor& image) {
  Tensor x = patchify_.forward(image);
  for (auto& block : blocks_) x = block.forward(x);
  Tensor normed = final_norm_.forward(x);
  return readout_.forward(normed.row_copy(0));
}

ToyVfm::TokensOutput ToyVfm::forward_tokens(const Tensor& image) {
  Tensor x = patchify_.forward(image);
  for (auto& block : blocks_) x = block.forward(x);
  TokensOutput out;
  out.tokens = final_norm_.forward(x);
  out.embedding = readout_.forward(out.tokens.row_copy(0));
  cached_from_ = 0;
  suffix_cached_ = true;
  return out;
}

void ToyVfm::backward_tokens(const Tensor& d_tokens, const Tensor& d_embedding) {
  if (!suffix_cached_ || cached_from_ != 0) throw StateError("backward_tokens called without forward_tokens");
  Tensor d({config_.tokens(), config_.width});
  if (!d_tokens.empty()) d += d_tokens;
  if (!d_embedding.empty()) {
    Tensor d_cls = readout_.backward(d_embedding);
    auto row0 = d.row(0);
    for (std::size_t c = 0; c < row0.size(); ++c) row0[c] += d_cls[c];
  }
  d = final_norm_.backward(d);
  for (std::size_t b = blocks_.size(); b-- > 0;) d = blocks_[b].backward(d);
  patchify_.backward(d);
  suffix_cached_ = false;
}

std::vector<Tensor> ToyVfm::block_outputs(const Tensor& image) {
  std::vector<Tensor> outs;
  outs.reserve(blocks_.size());
  Tensor x = patchify_.forward(image);
  for (auto& block : blocks_) {
    x = block.forward(x);
    outs.push_back(x);
  }
  return outs;
}

std::vector<Parameter*> ToyVfm::parameters() {
  std::vector<Parameter*> out = patchify_.parameters();
  for (auto& block : blocks_) {
    auto p = block.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  for (Layer* l : std::initializer_list<Layer*>{&final_norm_, &readout_}) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Parameter*> ToyVfm::parameters() const {
  auto mutable_params = const_cast<ToyVfm*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Parameter*> ToyVfm::suffix_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t b = config_.split; b < blocks_.size(); ++b) {
    auto p = blocks_[b].parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  for (Layer* l : std::initializer_list<Layer*>{&final_norm_, &readout_}) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<bool> ToyVfm::freeze_mask() const {
  std::vector<bool> mask;
  for (const Parameter* p : parameters()) mask.push_back(p->frozen);
  return mask;
}

void ToyVfm::set_freeze_mask(const std::vector<bool>& mask) {
  auto params = parameters();
  if (mask.size() != params.size()) throw ArgumentError("freeze mask length does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->frozen = mask[i];
}

void ToyVfm::freeze_prefix() {
  unfreeze_all();
  for (Parameter* p : patchify_.parameters()) p->frozen = true;
  for (std::size_t b = 0; b < config_.split; ++b) {
    for (Parameter* p : blocks_[b].parameters()) p->frozen = true;
  }
}

void ToyVfm::unfreeze_all() {
  for (Parameter* p : parameters()) p->frozen = false;
}

void ToyVfm::zero_grad() {
  for (Parameter* p : parameters()) p->value.zero_grad();
}

TransformerBlock& ToyVfm::block(std::size_t one_based) {
  if (one_based < 1 || one_based > blocks_.size()) throw ArgumentError("block index out of range");
  return blocks_[one_based - 1];
}

// ---------------------------------------------------------------- profiling

double mean_top_k_magnitude(std::span<const double> values, std::size_t k) {
  if (k == 0) throw ArgumentError("top-k requires k >= 1");
  if (k > values.size()) {
    throw ArgumentError("k = " + std::to_string(k) + " exceeds the " + std::to_string(values.size()) +
                        " activations per block");
  }
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::partial_sort(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end(), std::greater<>());
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += mags[i];
  return acc / static_cast<double>(k);
}

ActivationProfile profile_activations(ToyVfm& model, std::span<const Tensor> images, std::size_t k) {
  if (images.empty()) throw ArgumentError("profile_activations needs at least one image");
  if (k == 0) throw ArgumentError("top-k requires k >= 1");
  ActivationProfile profile;
  profile.k = k;
  profile.image_count = images.size();
  profile.per_block.assign(model.config().blocks, 0.0);
  // Per-image values are collected first and folded in sorted order so the
  // result does not depend on the order of the images.
  std::vector<std::vector<double>> per_image(model.config().blocks);
  for (const Tensor& image : images) {
    auto outs = model.block_outputs(image);
    for (std::size_t b = 0; b < outs.size(); ++b) per_image[b].push_back(mean_top_k_magnitude(outs[b].data(), k));
  }
  for (std::size_t b = 0; b < per_image.size(); ++b) {
    std::sort(per_image[b].begin(), per_image[b].end());
    double acc = 0.0;
    for (double v : per_image[b]) acc += v;
    profile.per_block[b] = acc / static_cast<double>(images.size());
  }
  return profile;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BlockSelection select_expressive_block(const ActivationProfile& profile, double ratio) {
  const auto& p = profile.per_block;
  if (!(ratio > 1.0)) throw ArgumentError("onset ratio must exceed 1");
  if (p.size() < 2) throw ArgumentError("block selection needs at least two blocks");
  if (std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; })) {
    throw ArgumentError("degenerate activation profile (all zeros)");
  }
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double base = median(std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i)));
    if (p[i] > 0.0 && p[i] >= ratio * base) return {i + 1, true};
  }
  const auto argmax = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return {argmax + 1, false};
}

}  // namespace activemark
