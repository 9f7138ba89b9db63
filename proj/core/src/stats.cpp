#include "activemark/stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "activemark/errors.hpp"

namespace activemark {

namespace {

__extension__ typedef unsigned __int128 u128;

constexpr std::size_t kExactBinomialLimit = 120;

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double log_choose(std::size_t n, std::size_t k) {
  return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) - std::lgamma(double(n - k) + 1.0);
}

/// P[Bin(trials, p) = j].
double binomial_pmf(std::size_t trials, double p, std::size_t j) {
  if (p <= 0.0) return j == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return j == trials ? 1.0 : 0.0;
  if (trials <= kExactBinomialLimit) {
    return binomial_coefficient(trials, j) * std::pow(p, double(j)) * std::pow(1.0 - p, double(trials - j));
  }
  return std::exp(log_choose(trials, j) + double(j) * std::log(p) + double(trials - j) * std::log1p(-p));
}

std::size_t binomial_mode(std::size_t trials, double p) {
  const auto m = static_cast<std::size_t>(std::floor(double(trials + 1) * p));
  return std::min(m, trials);
}

void check_probability(double p, std::string_view what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError(std::string(what) + ": probability out of [0, 1]");
}

}  // namespace

std::size_t hamming(const Message& a, const Message& b) {
  if (a.size() != b.size()) {
    throw ArgumentError("hamming: messages have different lengths (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  if (n <= kExactBinomialLimit) {
    u128 c = 1;
    for (std::size_t i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    return static_cast<double>(c);
  }
  return std::exp(log_choose(n, k));
}

double binomial_tail(std::size_t n, double r, std::size_t tau) {
  check_probability(r, "binomial_tail");
  if (tau >= n) return 1.0;
  CompensatedSum acc;
  for (std::size_t j = 0; j <= tau; ++j) acc.add(binomial_pmf(n, 1.0 - r, j));
  return std::min(1.0, acc.value());
}

std::optional<std::size_t> select_threshold(std::size_t n, double r, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw ArgumentError("select_threshold: eps must lie in (0, 1)");
  if (n == 0) throw ArgumentError("select_threshold: n must be positive");
  std::optional<std::size_t> best;
  for (std::size_t tau = 0; tau < n; ++tau) {
    if (binomial_tail(n, r, tau) < eps) {
      best = tau;
    } else {
      break;
    }
  }
  return best;
}

double binomial_upper_tail(std::size_t trials, double p, std::size_t k) {
  check_probability(p, "binomial_upper_tail");
  if (k == 0) return 1.0;
  if (k > trials) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  if (k <= binomial_mode(trials, p)) return std::clamp(1.0 - binomial_cdf(trials, p, k - 1), 0.0, 1.0);
  // Terms decrease from j = k upward.
  const double ratio = p / (1.0 - p);
  double term = binomial_pmf(trials, p, k);
  CompensatedSum acc;
  for (std::size_t j = k; j <= trials && term > 0.0; ++j) {
    acc.add(term);
    if (term < acc.value() * 1e-18) break;
    term *= double(trials - j) / double(j + 1) * ratio;
  }
  return std::min(1.0, acc.value());
}

double binomial_cdf(std::size_t trials, double p, std::size_t k) {
  check_probability(p, "binomial_cdf");
  if (k >= trials) return 1.0;
  if (p <= 0.0) return 1.0;
  if (p >= 1.0) return 0.0;
  if (k >= binomial_mode(trials, p)) return std::clamp(1.0 - binomial_upper_tail(trials, p, k + 1), 0.0, 1.0);
  // Terms decrease from j = k downward.
  const double ratio = (1.0 - p) / p;
  double term = binomial_pmf(trials, p, k);
  CompensatedSum acc;
  for (std::size_t j = k + 1; j-- > 0 && term > 0.0;) {
    acc.add(term);
    if (term < acc.value() * 1e-18 || j == 0) break;
    term *= double(j) / double(trials - j + 1) * ratio;
  }
  return std::min(1.0, acc.value());
}

double clopper_pearson(std::size_t successes, std::size_t trials, double level, BoundSide side) {
  if (successes > trials) throw ArgumentError("clopper_pearson: successes exceed trials");
  if (trials == 0) throw ArgumentError("clopper_pearson: need at least one trial");
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("clopper_pearson: level must lie in (0, 1)");
  double lo = 0.0;
  double hi = 1.0;
  if (side == BoundSide::lower) {
    if (successes == 0) return 0.0;
    // P[Bin(M, l) >= k] increases with l; keep lo feasible.
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      if (binomial_upper_tail(trials, mid, successes) <= level) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return lo;
  }
  if (successes == trials) return 1.0;
  // P[Bin(M, u) <= k] decreases with u; keep hi feasible.
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_cdf(trials, mid, successes) <= level) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double poisson_binomial_cdf(std::span<const double> probs, std::size_t t) {
  for (double p : probs) check_probability(p, "poisson_binomial_cdf");
  if (t >= probs.size()) return 1.0;
  // dist[j] = P[partial sum = j] for j <= t; mass above t never returns.
  std::vector<double> dist(t + 1, 0.0);
  dist[0] = 1.0;
  std::size_t reach = 0;
  for (double p : probs) {
    reach = std::min(reach + 1, t);
    for (std::size_t j = reach; j >= 1; --j) dist[j] = dist[j] * (1.0 - p) + dist[j - 1] * p;
    dist[0] *= 1.0 - p;
  }
  CompensatedSum acc;
  for (double v : dist) acc.add(v);
  return std::min(1.0, acc.value());
}

double poisson_binomial_sf(std::span<const double> probs, std::size_t t) {
  const std::size_t n = probs.size();
  if (t >= n) return 0.0;
  std::vector<double> flipped(n);
  std::transform(probs.begin(), probs.end(), flipped.begin(), [](double p) { return 1.0 - p; });
  // S > t  <=>  n - S <= n - t - 1
  return poisson_binomial_cdf(flipped, n - t - 1);
}

std::string_view to_string(Population p) noexcept { return p == Population::omega ? "omega" : "xi"; }

BitMatchEstimate bit_match_bounds(std::span<const std::size_t> matches, std::size_t models, std::size_t bits,
                                  double alpha, Population population) {
  if (models == 0 || bits == 0) throw ArgumentError("bit_match_bounds: need at least one model and one bit");
  if (matches.empty()) throw ArgumentError("bit_match_bounds: no triggers");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("bit_match_bounds: alpha must lie in (0, 1)");
  BitMatchEstimate est;
  est.population = population;
  est.alpha = alpha;
  est.models = models;
  est.bits = bits;
  est.matches.assign(matches.begin(), matches.end());
  const double level = alpha / static_cast<double>(matches.size());
  for (std::size_t k : matches) {
    est.lower.push_back(clopper_pearson(k, est.trials(), level, BoundSide::lower));
    est.upper.push_back(clopper_pearson(k, est.trials(), level, BoundSide::upper));
  }
  return est;
}

void DecisionPolicy::validate(std::size_t n, std::size_t triggers) const {
  if (tau >= n) throw ArgumentError("policy: tau must be below the message length");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ArgumentError("policy: epsilon must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("policy: alpha must lie in (0, 1)");
  if (!(r_lower > 0 && r_lower < r_upper && r_upper <= triggers)) {
    throw ArgumentError("policy: need 0 < r_lower < r_upper <= N (got r_lower=" + std::to_string(r_lower) +
                        ", r_upper=" + std::to_string(r_upper) + ", N=" + std::to_string(triggers) + ")");
  }
}

DetectionBounds bound_from_detection_probabilities(std::span<const double> s_lower, std::span<const double> s_upper,
                                                   const DecisionPolicy& policy) {
  if (s_lower.size() != s_upper.size()) throw ArgumentError("bounds: trigger counts differ between populations");
  DetectionBounds out;
  out.s_lower.assign(s_lower.begin(), s_lower.end());
  out.s_upper.assign(s_upper.begin(), s_upper.end());
  out.p_omega = poisson_binomial_cdf(s_lower, policy.r_upper - 1);
  out.p_xi = poisson_binomial_sf(s_upper, policy.r_lower);
  out.confidence = 1.0 - policy.alpha;
  return out;
}

DetectionBounds bound_detection_probabilities(const BitMatchEstimate& omega, const BitMatchEstimate& xi,
                                              const DecisionPolicy& policy, std::size_t n) {
  if (omega.triggers() != xi.triggers()) throw ArgumentError("bounds: trigger counts differ between populations");
  policy.validate(n, omega.triggers());
  std::vector<double> s_lower, s_upper;
  for (double l : omega.lower) s_lower.push_back(binomial_tail(n, l, policy.tau));
  for (double u : xi.upper) s_upper.push_back(binomial_tail(n, u, policy.tau));
  return bound_from_detection_probabilities(s_lower, s_upper, policy);
}

std::vector<double> direct_detection_bounds(std::span<const std::size_t> detected, std::size_t models, double alpha,
                                            BoundSide side) {
  if (detected.empty()) throw ArgumentError("direct_detection_bounds: no triggers");
  const double level = alpha / static_cast<double>(detected.size());
  std::vector<double> out;
  out.reserve(detected.size());
  for (std::size_t k : detected) out.push_back(clopper_pearson(k, models, level, side));
  return out;
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::watermarked: return "watermarked";
    case Verdict::independent: return "independent";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "watermarked") return Verdict::watermarked;
  if (s == "independent") return Verdict::independent;
  if (s == "inconclusive") return Verdict::inconclusive;
  throw FormatError("unknown verdict '" + std::string(s) + "'");
}

Verdict verdict(std::size_t detection_rate, const DecisionPolicy& policy) {
  if (detection_rate >= policy.r_upper) return Verdict::watermarked;
  if (detection_rate <= policy.r_lower) return Verdict::independent;
  return Verdict::inconclusive;
}

DecisionPolicy calibrate_policy(const BitMatchEstimate& xi, const BitMatchEstimate* omega, std::size_t n,
                                std::size_t tau, double epsilon, double target_xi, double target_omega) {
  const std::size_t triggers = xi.triggers();
  if (triggers < 2) throw ArgumentError("calibrate_policy: need at least two triggers");
  if (omega && omega->triggers() != triggers) throw ArgumentError("calibrate_policy: trigger counts differ");
  DecisionPolicy policy;
  policy.tau = tau;
  policy.epsilon = epsilon;
  policy.alpha = xi.alpha;

  std::vector<double> s_upper;
  for (double u : xi.upper) s_upper.push_back(binomial_tail(n, u, tau));
  std::size_t r_lower = 0;
  for (std::size_t t = 1; t < triggers; ++t) {
    if (poisson_binomial_sf(s_upper, t) <= target_xi) {
      r_lower = t;
      break;
    }
  }
  if (r_lower == 0) throw ArgumentError("calibrate_policy: no r_lower meets the independent-model target");
  policy.r_lower = r_lower;

  if (omega) {
    std::vector<double> s_lower;
    for (double l : omega->lower) s_lower.push_back(binomial_tail(n, l, tau));
    std::size_t r_upper = r_lower + 1;
    for (std::size_t t = triggers; t > r_lower; --t) {
      if (poisson_binomial_cdf(s_lower, t - 1) <= target_omega) {
        r_upper = t;
        break;
      }
    }
    policy.r_upper = r_upper;
  } else {
    policy.r_upper = r_lower + (triggers - r_lower + 1) / 2;
  }
  policy.validate(n, triggers);
  return policy;
}

ChiSquareResult bit_homogeneity_test(std::span<const std::size_t> matches_per_bit, std::size_t trials_per_bit) {
  if (matches_per_bit.size() < 2 || trials_per_bit == 0) {
    throw ArgumentError("bit_homogeneity_test: need >= 2 bit positions and >= 1 trial");
  }
  double total = 0.0;
  for (auto c : matches_per_bit) total += double(c);
  const double pooled = total / (double(trials_per_bit) * double(matches_per_bit.size()));
  ChiSquareResult out;
  out.dof = matches_per_bit.size() - 1;
  if (pooled <= 0.0 || pooled >= 1.0) return out;
  const double expected = pooled * double(trials_per_bit);
  const double var = expected * (1.0 - pooled);
  for (auto c : matches_per_bit) out.statistic += (double(c) - expected) * (double(c) - expected) / var;
  out.p_value = boost::math::gamma_q(0.5 * double(out.dof), 0.5 * out.statistic);
  return out;
}

}  // namespace activemark
