#include "activemark/verify.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "activemark/errors.hpp"

namespace activemark {

void check_compatible(const ToyVfm& suspect, const WatermarkKey& key) {
  const ArchConfig& a = suspect.config();
  if (a.width != key.h) {
    throw IncompatibleSuspect("suspect hidden width " + std::to_string(a.width) + " differs from key width " +
                              std::to_string(key.h));
  }
  if (a.embed_dim != key.d) {
    throw IncompatibleSuspect("suspect embedding width " + std::to_string(a.embed_dim) +
                              " differs from key width " + std::to_string(key.d));
  }
  if (key.split < 1 || key.split >= a.blocks) {
    throw IncompatibleSuspect("suspect has " + std::to_string(a.blocks) + " blocks; cannot split after block " +
                              std::to_string(key.split));
  }
}

Message extract_message(ToyVfm& suspect, const WatermarkKey& key, const Tensor& image, const Message& m) {
  Encoder encoder = key.encoder;
  Decoder decoder = key.decoder;
  try {
    Tensor hidden = suspect.prefix(image, key.split);
    Tensor u = suspect.suffix(inject(encoder, hidden, m), key.split);
    return binarize(decoder.decode(u));
  } catch (const ShapeError& e) {
    throw IncompatibleSuspect(std::string("suspect cannot process the trigger: ") + e.what());
  }
}

Extraction extract_all(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers) {
  check_compatible(suspect, key);
  if (triggers.size() != key.N()) {
    throw ArgumentError("key has " + std::to_string(key.N()) + " triggers but " + std::to_string(triggers.size()) +
                        " images were supplied");
  }
  Extraction out;
  for (std::size_t i = 0; i < triggers.size(); ++i) {
    Message m = extract_message(suspect, key, triggers[i], key.messages[i]);
    const std::size_t dist = hamming(key.messages[i], m);
    out.distances.push_back(dist);
    out.matches.push_back(key.n - dist);
    out.extracted.push_back(std::move(m));
  }
  return out;
}

std::size_t detection_rate(std::span<const std::size_t> distances, std::size_t tau) {
  return static_cast<std::size_t>(std::count_if(distances.begin(), distances.end(), [&](auto d) { return d <= tau; }));
}

DetectionResult detection_rate(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers,
                               std::size_t tau) {
  auto ex = extract_all(suspect, key, triggers);
  DetectionResult out;
  out.rate = detection_rate(ex.distances, tau);
  out.distances = std::move(ex.distances);
  return out;
}

std::vector<double> detection_curve(std::span<const std::size_t> distances, std::size_t n) {
  std::vector<double> out;
  const double N = distances.empty() ? 1.0 : static_cast<double>(distances.size());
  for (std::size_t tau = 0; tau <= n; ++tau) out.push_back(static_cast<double>(detection_rate(distances, tau)) / N);
  return out;
}

BitMatchEstimate estimate_bit_match(std::span<ToyVfm> suspects, const WatermarkKey& key,
                                    std::span<const Tensor> triggers, double alpha, Population population) {
  if (suspects.empty()) throw ArgumentError("estimate_bit_match: need at least one suspect");
  std::vector<std::size_t> matches(key.N(), 0);
  for (auto& s : suspects) {
    auto ex = extract_all(s, key, triggers);
    for (std::size_t i = 0; i < matches.size(); ++i) matches[i] += ex.matches[i];
  }
  return bit_match_bounds(matches, suspects.size(), key.n, alpha, population);
}

std::vector<std::size_t> detections_per_trigger(std::span<ToyVfm> suspects, const WatermarkKey& key,
                                                std::span<const Tensor> triggers, std::size_t tau) {
  std::vector<std::size_t> counts(key.N(), 0);
  for (auto& s : suspects) {
    auto ex = extract_all(s, key, triggers);
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += ex.distances[i] <= tau;
  }
  return counts;
}

DecisionPolicy default_policy(std::size_t N, std::size_t tau) {
  if (N < 2) throw ArgumentError("default_policy: need at least two triggers");
  DecisionPolicy p;
  p.tau = tau;
  p.r_upper = static_cast<std::size_t>(std::ceil(0.75 * static_cast<double>(N)));
  p.r_lower = static_cast<std::size_t>(std::floor(0.6 * static_cast<double>(N)));
  p.r_upper = std::clamp<std::size_t>(p.r_upper, 2, N);
  p.r_lower = std::clamp<std::size_t>(p.r_lower, 1, p.r_upper - 1);
  return p;
}

VerificationReport verify_suspect(ToyVfm& suspect, const WatermarkKey& key, std::span<const Tensor> triggers,
                                  const DecisionPolicy& policy, std::string suspect_id) {
  policy.validate(key.n, key.N());
  VerificationReport r;
  r.suspect_id = std::move(suspect_id);
  r.n = key.n;
  r.N = key.N();
  r.policy = policy;
  try {
    auto ex = extract_all(suspect, key, triggers);
    r.distances = std::move(ex.distances);
  } catch (const IncompatibleSuspect& e) {
    r.incompatible = true;
    r.incompatibility = e.what();
    r.verdict = Verdict::independent;
    return r;
  }
  r.detection_rate = detection_rate(r.distances, policy.tau);
  r.verdict = verdict(r.detection_rate, policy);
  r.curve = detection_curve(r.distances, key.n);
  return r;
}

}  // namespace activemark
