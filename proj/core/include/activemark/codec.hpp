#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "activemark/layers.hpp"
#include "activemark/tensor.hpp"

namespace activemark {

/// Binary watermark m in {0,1}^n.
class Message {
 public:
  Message() = default;
  explicit Message(std::vector<std::uint8_t> bits);
  /// Parses a string of '0'/'1' characters.
  static Message parse(std::string_view bits);

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::string to_string() const;
  Message complement() const;

  friend bool operator==(const Message&, const Message&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Decoder output before binarisation; values in [0, 1].
struct SoftMessage {
  std::vector<double> values;
};

/// e: R^h x {0,1}^n -> R^h, two dense layers with GELU in between.
class Encoder {
 public:
  Encoder() = default;
  /// Hidden width defaults to 2 * max(h, n).
  Encoder(std::size_t h, std::size_t n, std::uint64_t seed, std::size_t hidden_width = 0);

  std::size_t h() const noexcept { return h_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t hidden_width() const noexcept { return fc1_.out_features(); }

  /// e(concat(token, m)); caches for backward().
  Tensor encode(std::span<const double> token, const Message& m);
  /// Returns dL/d(concat input) and accumulates parameter grads.
  Tensor backward(const Tensor& d_out);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Linear& first() noexcept { return fc1_; }
  Linear& second() noexcept { return fc2_; }

 private:
  std::size_t h_ = 0;
  std::size_t n_ = 0;
  Linear fc1_;
  Gelu act_;
  Linear fc2_;
};

/// d: R^d -> (0,1)^n, two dense layers with GELU in between and a final sigmoid.
class Decoder {
 public:
  Decoder() = default;
  Decoder(std::size_t d, std::size_t n, std::uint64_t seed, std::size_t hidden_width = 0);

  std::size_t d() const noexcept { return d_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t hidden_width() const noexcept { return fc1_.out_features(); }

  SoftMessage decode(const Tensor& u);
  /// dL/d(soft) -> dL/du.
  Tensor backward(std::span<const double> d_soft);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Linear& first() noexcept { return fc1_; }
  Linear& second() noexcept { return fc2_; }

 private:
  std::size_t d_ = 0;
  std::size_t n_ = 0;
  Linear fc1_;
  Gelu act_;
  Linear fc2_;
  Sigmoid out_;
};

/// Replaces token 0 of `hidden` with e(concat(hidden[0], m)); other tokens are copied untouched.
Tensor inject(Encoder& encoder, const Tensor& hidden, const Message& m);

SoftMessage decode_soft(Decoder& decoder, const Tensor& u);

/// Bit i is 1 iff soft_i >= 1/2.
Message binarize(const SoftMessage& soft);

struct WatermarkLoss {
  double total = 0.0;
  double fidelity = 0.0;    // ||u_clean - u_marked||_2
  double message_l1 = 0.0;  // sum_i |m_i - soft_i|
  Tensor d_marked;          // dL/du_marked
  std::vector<double> d_soft;
};

/// d ||u_clean - u_marked||_2 / d u_marked; zero where the two coincide.
Tensor fidelity_gradient(const Tensor& u_clean, const Tensor& u_marked);

/// ||u_clean - u_marked||_2 + lambda * sum_i |m_i - soft_i|, with gradients.
WatermarkLoss watermark_loss_terms(const Tensor& u_clean, const Tensor& u_marked, const Message& m,
                                   const SoftMessage& soft, double lambda);

double watermark_loss(const Tensor& u_clean, const Tensor& u_marked, const Message& m, const SoftMessage& soft,
                      double lambda);

}  // namespace activemark
