#include "activemark/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "activemark/errors.hpp"
#include "activemark/rng.hpp"

namespace activemark {

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::layernorm: return "layernorm";
    case LayerKind::attention: return "multi-head-attention";
    case LayerKind::gelu: return "gelu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::patchify: return "embedding-patchify";
    case LayerKind::transformer_block: return "transformer-block";
  }
  return "unknown";
}

void Layer::zero_grad() {
  for (auto* p : parameters()) p->value.zero_grad();
}

const Tensor& Layer::take(const std::optional<Tensor>& cache, std::string_view layer) {
  if (!cache) throw StateError(std::string(layer) + ": backward called without a matching forward");
  return *cache;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, std::string name, bool bias)
    : in_(in), out_(out), has_bias_(bias) {
  weight_ = {name + ".weight", ParamKind::weight, Tensor::randn({in, out}, rng, std::sqrt(1.0 / double(in)))};
  if (bias) bias_ = {name + ".bias", ParamKind::bias, Tensor({out})};
}

std::vector<Parameter*> Linear::parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

Tensor Linear::forward(const Tensor& x) {
  if (x.empty() || x.cols() != in_) {
    throw ShapeError(weight_.name + ": expected last extent " + std::to_string(in_) + ", got " +
                     std::to_string(x.cols()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  Tensor y(out_shape);
  const auto& w = weight_.value;
  const auto& b = bias_.value;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t j = 0; j < out_; ++j) yr[j] = has_bias_ ? b[j] : 0.0;
    for (std::size_t i = 0; i < in_; ++i) {
      const double xv = xr[i];
      const double* wrow = w.data().data() + i * out_;
      for (std::size_t j = 0; j < out_; ++j) yr[j] += xv * wrow[j];
    }
  }
  y.require_finite(weight_.name);
  input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const Tensor& x = take(input_, weight_.name);
  if (dy.cols() != out_ || dy.rows() != x.rows()) throw ShapeError(weight_.name + ": gradient shape mismatch");
  Tensor dx(x.shape());
  auto gw = weight_.value.grad();
  std::span<double> gb = has_bias_ ? bias_.value.grad() : std::span<double>();
  const auto& w = weight_.value;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto dyr = dy.row(r);
    auto dxr = dx.row(r);
    if (has_bias_)
      for (std::size_t j = 0; j < out_; ++j) gb[j] += dyr[j];
    for (std::size_t i = 0; i < in_; ++i) {
      const double* wrow = w.data().data() + i * out_;
      double* gwrow = gw.data() + i * out_;
      double acc = 0.0;
      const double xv = xr[i];
      for (std::size_t j = 0; j < out_; ++j) {
        acc += dyr[j] * wrow[j];
        gwrow[j] += xv * dyr[j];
      }
      dxr[i] = acc;
    }
  }
  input_.reset();
  dx.require_finite(weight_.name + " backward");
  return dx;
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::size_t width, std::string name) : width_(width) {
  gain_ = {name + ".gain", ParamKind::norm, Tensor({width}, 1.0)};
  shift_ = {name + ".shift", ParamKind::norm, Tensor({width}, 0.0)};
}

Tensor LayerNorm::forward(const Tensor& x) {
  if (x.empty() || x.cols() != width_) throw ShapeError(gain_.name + ": width mismatch");
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  inv_std_.assign(x.rows(), 0.0);
  const auto n = static_cast<double>(width_);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[r] = inv;
    auto hr = xhat.row(r);
    auto yr = y.row(r);
    for (std::size_t i = 0; i < width_; ++i) {
      hr[i] = (xr[i] - mean) * inv;
      yr[i] = gain_.value[i] * hr[i] + shift_.value[i];
    }
  }
  y.require_finite(gain_.name);
  normalized_ = std::move(xhat);
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
  const Tensor& xhat = take(normalized_, gain_.name);
  if (dy.shape() != xhat.shape()) throw ShapeError(gain_.name + ": gradient shape mismatch");
  Tensor dx(xhat.shape());
  auto gg = gain_.value.grad();
  auto gs = shift_.value.grad();
  const auto n = static_cast<double>(width_);
  std::vector<double> dxhat(width_);
  for (std::size_t r = 0; r < xhat.rows(); ++r) {
    auto hr = xhat.row(r);
    auto dyr = dy.row(r);
    double sum_d = 0.0;
    double sum_dh = 0.0;
    for (std::size_t i = 0; i < width_; ++i) {
      gg[i] += dyr[i] * hr[i];
      gs[i] += dyr[i];
      dxhat[i] = dyr[i] * gain_.value[i];
      sum_d += dxhat[i];
      sum_dh += dxhat[i] * hr[i];
    }
    auto dxr = dx.row(r);
    for (std::size_t i = 0; i < width_; ++i) {
      dxr[i] = inv_std_[r] / n * (n * dxhat[i] - sum_d - hr[i] * sum_dh);
    }
  }
  normalized_.reset();
  dx.require_finite(gain_.name + " backward");
  return dx;
}

// ---------------------------------------------------------------- activations

Tensor Gelu::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  y.require_finite("gelu");
  input_ = x;
  return y;
}

Tensor Gelu::backward(const Tensor& dy) {
  const Tensor& x = take(input_, "gelu");
  if (dy.shape() != x.shape()) throw ShapeError("gelu: gradient shape mismatch");
  Tensor dx(x.shape());
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  input_.reset();
  dx.require_finite("gelu backward");
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) {
    if (v >= 0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  y.require_finite("sigmoid");
  output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
  const Tensor& y = take(output_, "sigmoid");
  if (dy.shape() != y.shape()) throw ShapeError("sigmoid: gradient shape mismatch");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  output_.reset();
  dx.require_finite("sigmoid backward");
  return dx;
}

// ---------------------------------------------------------------- attention

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng, std::string name)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0) throw ArgumentError(name + ": width must be divisible by heads");
  qkv_ = Linear(width, 3 * width, rng, name + ".qkv", false);
  qv_bias_ = {name + ".qkv.bias", ParamKind::bias, Tensor({2 * width})};
  proj_ = Linear(width, width, rng, name + ".proj");
}

std::vector<Parameter*> MultiHeadAttention::parameters() {
  auto p = qkv_.parameters();
  p.push_back(&qv_bias_);
  auto q = proj_.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

Tensor MultiHeadAttention::forward(const Tensor& x) {
  if (x.rank() != 2 || x.cols() != width_) throw ShapeError("attention: expected [tokens x width] input");
  const std::size_t t = x.rows();
  const std::size_t dh = width_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor qkv = qkv_.forward(x);
  for (std::size_t i = 0; i < t; ++i) {
    auto row = qkv.row(i);
    for (std::size_t c = 0; c < width_; ++c) {
      row[c] += qv_bias_.value[c];
      row[2 * width_ + c] += qv_bias_.value[width_ + c];
    }
  }
  Tensor mixed({t, width_});
  probs_.assign(heads_, Tensor());
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t qo = h * dh, ko = width_ + h * dh, vo = 2 * width_ + h * dh;
    Tensor p({t, t});
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qkv.at(i, qo + c) * qkv.at(j, ko + c);
        s *= scale;
        p.at(i, j) = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        p.at(i, j) = std::exp(p.at(i, j) - mx);
        z += p.at(i, j);
      }
      for (std::size_t j = 0; j < t; ++j) p.at(i, j) /= z;
      for (std::size_t j = 0; j < t; ++j) {
        const double pij = p.at(i, j);
        for (std::size_t c = 0; c < dh; ++c) mixed.at(i, qo + c) += pij * qkv.at(j, vo + c);
      }
    }
    probs_[h] = std::move(p);
  }
  Tensor y = proj_.forward(mixed);
  qkv_out_ = std::move(qkv);
  return y;
}

Tensor MultiHeadAttention::backward(const Tensor& dy) {
  const Tensor& qkv = take(qkv_out_, "attention");
  const std::size_t t = qkv.rows();
  const std::size_t dh = width_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor dmixed = proj_.backward(dy);
  Tensor dqkv({t, 3 * width_});
  std::vector<double> dp(t);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t qo = h * dh, ko = width_ + h * dh, vo = 2 * width_ + h * dh;
    const Tensor& p = probs_[h];
    for (std::size_t i = 0; i < t; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          acc += dmixed.at(i, qo + c) * qkv.at(j, vo + c);
          dqkv.at(j, vo + c) += p.at(i, j) * dmixed.at(i, qo + c);
        }
        dp[j] = acc;
        dot += acc * p.at(i, j);
      }
      for (std::size_t j = 0; j < t; ++j) {
        const double ds = p.at(i, j) * (dp[j] - dot) * scale;
        for (std::size_t c = 0; c < dh; ++c) {
          dqkv.at(i, qo + c) += ds * qkv.at(j, ko + c);
          dqkv.at(j, ko + c) += ds * qkv.at(i, qo + c);
        }
      }
    }
  }
  auto gb = qv_bias_.value.grad();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < width_; ++c) {
      gb[c] += dqkv.at(i, c);
      gb[width_ + c] += dqkv.at(i, 2 * width_ + c);
    }
  }
  qkv_out_.reset();
  probs_.clear();
  return qkv_.backward(dqkv);
}

// ---------------------------------------------------------------- patchify

Patchify::Patchify(ImageShape image, std::size_t patch, std::size_t width, Rng& rng, std::string name)
    : image_(image), patch_(patch), width_(width) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ArgumentError(name + ": image extents must be multiples of the patch size");
  }
  grid_h_ = image.height / patch;
  grid_w_ = image.width / patch;
  proj_ = Linear(patch_length(), width, rng, name + ".proj");
  cls_ = {name + ".cls", ParamKind::embedding, Tensor::randn({width}, rng, 0.02)};
  pos_ = {name + ".pos", ParamKind::embedding, Tensor::randn({tokens(), width}, rng, 0.02)};
}

std::vector<Parameter*> Patchify::parameters() {
  auto p = proj_.parameters();
  p.push_back(&cls_);
  p.push_back(&pos_);
  return p;
}

Tensor Patchify::to_patches(const Tensor& image) const {
  Tensor patches({grid_h_ * grid_w_, patch_length()});
  const std::size_t hw = image_.height * image_.width;
  for (std::size_t gy = 0; gy < grid_h_; ++gy) {
    for (std::size_t gx = 0; gx < grid_w_; ++gx) {
      auto row = patches.row(gy * grid_w_ + gx);
      std::size_t k = 0;
      for (std::size_t c = 0; c < image_.channels; ++c) {
        for (std::size_t dy = 0; dy < patch_; ++dy) {
          for (std::size_t dx = 0; dx < patch_; ++dx) {
            row[k++] = image[c * hw + (gy * patch_ + dy) * image_.width + gx * patch_ + dx];
          }
        }
      }
    }
  }
  return patches;
}

Tensor Patchify::forward(const Tensor& image) {
  if (image.shape() != image_.as_shape()) throw ShapeError("patchify: image shape mismatch");
  Tensor projected = proj_.forward(to_patches(image));
  Tensor tokens_out({tokens(), width_});
  for (std::size_t c = 0; c < width_; ++c) tokens_out.at(0, c) = cls_.value[c];
  for (std::size_t r = 0; r < projected.rows(); ++r) {
    for (std::size_t c = 0; c < width_; ++c) tokens_out.at(r + 1, c) = projected.at(r, c);
  }
  tokens_out += pos_.value;
  has_input_ = true;
  return tokens_out;
}

Tensor Patchify::backward(const Tensor& dy) {
  if (!has_input_) throw StateError("patchify: backward called without a matching forward");
  if (dy.rank() != 2 || dy.rows() != tokens() || dy.cols() != width_) {
    throw ShapeError("patchify: gradient shape mismatch");
  }
  auto gpos = pos_.value.grad();
  for (std::size_t i = 0; i < dy.size(); ++i) gpos[i] += dy[i];
  auto gcls = cls_.value.grad();
  for (std::size_t c = 0; c < width_; ++c) gcls[c] += dy.at(0, c);
  Tensor dproj({tokens() - 1, width_});
  for (std::size_t r = 1; r < tokens(); ++r) {
    for (std::size_t c = 0; c < width_; ++c) dproj.at(r - 1, c) = dy.at(r, c);
  }
  Tensor dpatches = proj_.backward(dproj);
  Tensor dimage(image_.as_shape());
  const std::size_t hw = image_.height * image_.width;
  for (std::size_t gy = 0; gy < grid_h_; ++gy) {
    for (std::size_t gx = 0; gx < grid_w_; ++gx) {
      auto row = dpatches.row(gy * grid_w_ + gx);
      std::size_t k = 0;
      for (std::size_t c = 0; c < image_.channels; ++c) {
        for (std::size_t py = 0; py < patch_; ++py) {
          for (std::size_t px = 0; px < patch_; ++px) {
            dimage[c * hw + (gy * patch_ + py) * image_.width + gx * patch_ + px] = row[k++];
          }
        }
      }
    }
  }
  has_input_ = false;
  return dimage;
}

// ---------------------------------------------------------------- transformer block

TransformerBlock::TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_ratio, Rng& rng,
                                   std::string name)
    : ln1_(width, name + ".ln1"),
      attn_(width, heads, rng, name + ".attn"),
      ln2_(width, name + ".ln2"),
      fc1_(width, mlp_ratio * width, rng, name + ".mlp.fc1"),
      fc2_(mlp_ratio * width, width, rng, name + ".mlp.fc2") {}

std::vector<Parameter*> TransformerBlock::parameters() {
  std::vector<Parameter*> out;
  for (Layer* l : std::initializer_list<Layer*>{&ln1_, &attn_, &ln2_, &fc1_, &fc2_}) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Tensor TransformerBlock::forward(const Tensor& x) {
  Tensor mid = x + attn_.forward(ln1_.forward(x));
  Tensor out = mid + fc2_.forward(act_.forward(fc1_.forward(ln2_.forward(mid))));
  has_input_ = true;
  return out;
}

Tensor TransformerBlock::backward(const Tensor& dy) {
  if (!has_input_) throw StateError("transformer block: backward called without a matching forward");
  Tensor dmid = dy + ln2_.backward(fc1_.backward(act_.backward(fc2_.backward(dy))));
  Tensor dx = dmid + ln1_.backward(attn_.backward(dmid));
  has_input_ = false;
  return dx;
}

}  // namespace activemark
