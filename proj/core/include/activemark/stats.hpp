#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "activemark/codec.hpp"

namespace activemark {

/// Number of positions where the two messages differ.
std::size_t hamming(const Message& a, const Message& b);

/// C(n, k) as a double; exact for n <= 120, lgamma-based beyond.
double binomial_coefficient(std::size_t n, std::size_t k);

/// Probability that a message of n bits, each matching with probability r,
/// has at most tau mismatches: sum_{j=0..tau} C(n,j) (1-r)^j r^(n-j).
double binomial_tail(std::size_t n, double r, std::size_t tau);

/// Largest tau < n whose false-acceptance tail stays strictly below eps;
/// empty when even tau = 0 exceeds the budget.
std::optional<std::size_t> select_threshold(std::size_t n, double r, double eps);

/// P[Bin(trials, p) <= k] and P[Bin(trials, p) >= k], each summed from the
/// small side so tiny tails keep their relative accuracy.
double binomial_cdf(std::size_t trials, double p, std::size_t k);
double binomial_upper_tail(std::size_t trials, double p, std::size_t k);

enum class BoundSide { lower, upper };

/// One-sided exact (Clopper-Pearson) bound on a binomial proportion.
///
/// lower: largest l with P[Bin(trials, l) >= k] <= level (0 when k = 0).
/// upper: smallest u with P[Bin(trials, u) <= k] <= level (1 when k = trials).
/// Found by bisection on the exact tail; the returned value is on the
/// conservative side of the bracket, within 1e-12.
double clopper_pearson(std::size_t successes, std::size_t trials, double level, BoundSide side);

/// P[sum of independent Bernoulli(probs_i) <= t], by an O(N t) convolution.
double poisson_binomial_cdf(std::span<const double> probs, std::size_t t);
/// P[sum > t], computed as the CDF of the complementary count (no 1 - x cancellation).
double poisson_binomial_sf(std::span<const double> probs, std::size_t t);

enum class Population { omega, xi };
std::string_view to_string(Population p) noexcept;

/// Per-trigger one-sided bounds on the bit-match probability, each at level alpha / N.
struct BitMatchEstimate {
  Population population = Population::omega;
  double alpha = 0.05;
  std::size_t models = 0;           // M
  std::size_t bits = 0;             // n
  std::vector<std::size_t> matches; // per trigger, out of models * bits
  std::vector<double> lower;        // l(x)
  std::vector<double> upper;        // u(x)

  std::size_t trials() const noexcept { return models * bits; }
  std::size_t triggers() const noexcept { return matches.size(); }
  /// l(x) for omega, u(x) for xi.
  const std::vector<double>& bound() const noexcept { return population == Population::omega ? lower : upper; }
};

/// Builds the estimate from pooled match counts (M models x n bits per trigger).
BitMatchEstimate bit_match_bounds(std::span<const std::size_t> matches, std::size_t models, std::size_t bits,
                                  double alpha, Population population);

struct DecisionPolicy {
  std::size_t tau = 0;
  double epsilon = 1e-4;
  double alpha = 0.05;
  std::size_t r_lower = 0;  // at or below: independent
  std::size_t r_upper = 1;  // at or above: watermarked

  /// Throws ArgumentError unless 0 <= tau < n, 0 < eps, alpha < 1 and 0 < r_lower < r_upper <= N.
  void validate(std::size_t n, std::size_t triggers) const;

  friend bool operator==(const DecisionPolicy&, const DecisionPolicy&) = default;
};

struct DetectionBounds {
  double p_omega = 1.0;          // bound on P[R < r_upper] for functional copies
  double p_xi = 1.0;             // bound on P[R > r_lower] for independent models
  double confidence = 0.0;       // 1 - alpha
  std::vector<double> s_lower;   // per-trigger detection probability, copies
  std::vector<double> s_upper;   // per-trigger detection probability, independent models
};

/// Composes the bit-level bounds through the binomial tail and then through
/// the Poisson-binomial distribution of R.
DetectionBounds bound_detection_probabilities(const BitMatchEstimate& omega, const BitMatchEstimate& xi,
                                              const DecisionPolicy& policy, std::size_t n);

/// Same composition from per-trigger detection probabilities directly.
DetectionBounds bound_from_detection_probabilities(std::span<const double> s_lower, std::span<const double> s_upper,
                                                   const DecisionPolicy& policy);

/// Per-trigger Clopper-Pearson bounds on P[rho <= tau] from how many of M suspects
/// were detected on that trigger. Cross-check for the bit-level route.
std::vector<double> direct_detection_bounds(std::span<const std::size_t> detected, std::size_t models, double alpha,
                                            BoundSide side);

enum class Verdict { watermarked, independent, inconclusive };
std::string_view to_string(Verdict v) noexcept;
Verdict parse_verdict(std::string_view s);

Verdict verdict(std::size_t detection_rate, const DecisionPolicy& policy);

/// Picks r_lower as the smallest count whose independent-model bound p_xi is at
/// most target_xi. With an omega estimate, r_upper is the largest count whose
/// p_omega is at most target_omega; without one it is the midpoint between
/// r_lower and N.
DecisionPolicy calibrate_policy(const BitMatchEstimate& xi, const BitMatchEstimate* omega, std::size_t n,
                                std::size_t tau, double epsilon, double target_xi, double target_omega);

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

/// Homogeneity of per-bit-position match rates: are all positions equally likely to match?
ChiSquareResult bit_homogeneity_test(std::span<const std::size_t> matches_per_bit, std::size_t trials_per_bit);

}  // namespace activemark
