#include "activemark/codec.hpp"

#include <algorithm>
#include <cmath>

#include "activemark/errors.hpp"
#include "activemark/rng.hpp"

namespace activemark {

Message::Message(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ArgumentError("message bits must be 0 or 1");
  }
}

Message Message::parse(std::string_view bits) {
  std::vector<std::uint8_t> out;
  out.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') throw FormatError("message string may contain only '0' and '1'");
    out.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return Message(std::move(out));
}

std::string Message::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(static_cast<char>('0' + b));
  return s;
}

Message Message::complement() const {
  std::vector<std::uint8_t> out(bits_.size());
  std::transform(bits_.begin(), bits_.end(), out.begin(), [](std::uint8_t b) { return std::uint8_t(1 - b); });
  return Message(std::move(out));
}

// ---------------------------------------------------------------- encoder

Encoder::Encoder(std::size_t h, std::size_t n, std::uint64_t seed, std::size_t hidden_width) : h_(h), n_(n) {
  if (h == 0 || n == 0) throw ArgumentError("encoder widths must be positive");
  const std::size_t w = hidden_width ? hidden_width : 2 * std::max(h, n);
  Rng rng(seed);
  fc1_ = Linear(h + n, w, rng, "encoder.fc1");
  fc2_ = Linear(w, h, rng, "encoder.fc2");
}

Tensor Encoder::encode(std::span<const double> token, const Message& m) {
  if (token.size() != h_ || m.size() != n_) {
    throw ShapeError("encoder expects a width-" + std::to_string(h_) + " token and a " + std::to_string(n_) +
                     "-bit message");
  }
  Tensor v({h_ + n_});
  std::copy(token.begin(), token.end(), v.data().begin());
  for (std::size_t i = 0; i < n_; ++i) v[h_ + i] = m[i];
  return fc2_.forward(act_.forward(fc1_.forward(v)));
}

Tensor Encoder::backward(const Tensor& d_out) { return fc1_.backward(act_.backward(fc2_.backward(d_out))); }

std::vector<Parameter*> Encoder::parameters() {
  auto p = fc1_.parameters();
  auto q = fc2_.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

std::vector<const Parameter*> Encoder::parameters() const {
  return {&fc1_.weight(), &fc1_.bias(), &fc2_.weight(), &fc2_.bias()};
}

// ---------------------------------------------------------------- decoder

Decoder::Decoder(std::size_t d, std::size_t n, std::uint64_t seed, std::size_t hidden_width) : d_(d), n_(n) {
  if (d == 0 || n == 0) throw ArgumentError("decoder widths must be positive");
  const std::size_t w = hidden_width ? hidden_width : 2 * std::max(d, n);
  Rng rng(seed);
  fc1_ = Linear(d, w, rng, "decoder.fc1");
  fc2_ = Linear(w, n, rng, "decoder.fc2");
}

SoftMessage Decoder::decode(const Tensor& u) {
  if (u.size() != d_ || u.rank() != 1) throw ShapeError("decoder expects a width-" + std::to_string(d_) + " embedding");
  Tensor y = out_.forward(fc2_.forward(act_.forward(fc1_.forward(u))));
  return SoftMessage{std::vector<double>(y.data().begin(), y.data().end())};
}

Tensor Decoder::backward(std::span<const double> d_soft) {
  if (d_soft.size() != n_) throw ShapeError("decoder gradient length mismatch");
  Tensor g({n_}, std::vector<double>(d_soft.begin(), d_soft.end()));
  return fc1_.backward(act_.backward(fc2_.backward(out_.backward(g))));
}

std::vector<Parameter*> Decoder::parameters() {
  auto p = fc1_.parameters();
  auto q = fc2_.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

std::vector<const Parameter*> Decoder::parameters() const {
  return {&fc1_.weight(), &fc1_.bias(), &fc2_.weight(), &fc2_.bias()};
}

// ---------------------------------------------------------------- operations

Tensor inject(Encoder& encoder, const Tensor& hidden, const Message& m) {
  if (hidden.rank() != 2 || hidden.cols() != encoder.h()) {
    throw ShapeError("inject: hidden width " + std::to_string(hidden.cols()) + " does not match encoder width " +
                     std::to_string(encoder.h()));
  }
  Tensor encoded = encoder.encode(hidden.row(0), m);
  Tensor out = hidden;
  out.drop_grad();
  std::copy(encoded.data().begin(), encoded.data().end(), out.row(0).begin());
  return out;
}

SoftMessage decode_soft(Decoder& decoder, const Tensor& u) { return decoder.decode(u); }

Message binarize(const SoftMessage& soft) {
  std::vector<std::uint8_t> bits(soft.values.size());
  std::transform(soft.values.begin(), soft.values.end(), bits.begin(),
                 [](double v) { return std::uint8_t(v >= 0.5 ? 1 : 0); });
  return Message(std::move(bits));
}

Tensor fidelity_gradient(const Tensor& u_clean, const Tensor& u_marked) {
  if (u_clean.shape() != u_marked.shape()) throw ShapeError("fidelity_gradient: embedding shapes differ");
  Tensor g(u_marked.shape());
  const double dist = l2_distance(u_clean.data(), u_marked.data());
  if (dist > 0.0) {
    for (std::size_t i = 0; i < u_marked.size(); ++i) g[i] = (u_marked[i] - u_clean[i]) / dist;
  }
  return g;
}

WatermarkLoss watermark_loss_terms(const Tensor& u_clean, const Tensor& u_marked, const Message& m,
                                   const SoftMessage& soft, double lambda) {
  if (u_clean.shape() != u_marked.shape()) throw ShapeError("watermark_loss: embedding shapes differ");
  if (m.size() != soft.values.size()) throw ShapeError("watermark_loss: message length mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("watermark_loss: lambda must be non-negative");

  WatermarkLoss out;
  out.fidelity = l2_distance(u_clean.data(), u_marked.data());
  out.d_marked = fidelity_gradient(u_clean, u_marked);
  out.d_soft.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double diff = soft.values[i] - static_cast<double>(m[i]);
    out.message_l1 += std::abs(diff);
    out.d_soft[i] = lambda * (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
  }
  out.total = out.fidelity + lambda * out.message_l1;
  if (!std::isfinite(out.total)) throw NumericError("watermark_loss: non-finite loss");
  return out;
}

double watermark_loss(const Tensor& u_clean, const Tensor& u_marked, const Message& m, const SoftMessage& soft,
                      double lambda) {
  return watermark_loss_terms(u_clean, u_marked, m, soft, lambda).total;
}

}  // namespace activemark
