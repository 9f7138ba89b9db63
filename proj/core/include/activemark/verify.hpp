#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "activemark/stats.hpp"
#include "activemark/toy_vfm.hpp"
#include "activemark/trainer.hpp"

namespace activemark {

/// Throws IncompatibleSuspect unless the suspect has the key's split, hidden width h and embedding width d.
void check_compatible(const ToyVfm& suspect, const WatermarkKey& key);

/// m' = binarize(decode(q(inject(encoder, p(image), m)))) on the suspect.
Message extract_message(ToyVfm& suspect, const WatermarkKey& key, const Tensor& image, const Message& m);

struct Extraction {
  std::vector<Message> extracted;
  std::vector<std::size_t> distances;  // Hamming distance to the embedded message, per trigger
  std::vector<std::size_t> matches;    // n - distance
};

/// Runs extraction on every trigger. Triggers must match key.N().
Extraction extract_all(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers);

/// Number of distances <= tau.
std::size_t detection_rate(std::span<const std::size_t> distances, std::size_t tau);

struct DetectionResult {
  std::size_t rate = 0;
  std::vector<std::size_t> distances;
};
DetectionResult detection_rate(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers,
                               std::size_t tau);

/// R(tau) / N for tau = 0..n.
std::vector<double> detection_curve(std::span<const std::size_t> distances, std::size_t n);

/// Pools bit matches of M suspects per trigger and bounds them at level alpha / N.
BitMatchEstimate estimate_bit_match(std::span<ToyVfm> suspects, const WatermarkKey& key,
                                    std::span<const Tensor> triggers, double alpha, Population population);

/// How many suspects detect each trigger at tau (for the direct per-image estimator).
std::vector<std::size_t> detections_per_trigger(std::span<ToyVfm> suspects, const WatermarkKey& key,
                                                std::span<const Tensor> triggers, std::size_t tau);

/// Policy used when nothing better is configured: r_upper = ceil(0.75 N), r_lower = floor(0.6 N),
/// nudged apart so that 0 < r_lower < r_upper <= N.
DecisionPolicy default_policy(std::size_t N, std::size_t tau);

struct VerificationReport {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  std::string suspect_id;
  bool incompatible = false;
  std::string incompatibility;
  std::size_t n = 0;
  std::size_t N = 0;
  std::vector<std::size_t> distances;
  std::size_t detection_rate = 0;
  Verdict verdict = Verdict::independent;
  DecisionPolicy policy;
  std::optional<double> p_omega;
  std::optional<double> p_xi;
  std::vector<double> curve;

  friend bool operator==(const VerificationReport&, const VerificationReport&) = default;
};

/// Extraction, detection rate and verdict for one suspect. An incompatible suspect
/// gets verdict "independent" with the incompatibility flag set.
VerificationReport verify_suspect(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers,
                                  const DecisionPolicy& policy, std::string suspect_id = {});

}  // namespace activemark
