// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Tolerances are fixed here, not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "activemark/codec.hpp"
#include "activemark/grad_check.hpp"
#include "activemark/images.hpp"
#include "activemark/io.hpp"
#include "activemark/layers.hpp"
#include "activemark/perturbations.hpp"
#include "activemark/rng.hpp"
#include "activemark/stats.hpp"
#include "activemark/toy_vfm.hpp"
#include "activemark/trainer.hpp"
#include "activemark/verify.hpp"

namespace am = activemark;

namespace {

constexpr std::uint64_t kModelInit = 0x6d6f646c;
constexpr std::uint64_t kTriggerImages = 0x74726967;
constexpr std::uint64_t kHoldoutImages = 0x686f6c64;
constexpr std::uint64_t kFixtureSeed = 7;
constexpr std::size_t kIndependentModels = 10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& title, Check& c) {
  std::cout << (c.ok ? "PASS" : "FAIL") << " " << id << " " << title << ":" << c.detail.str() << std::endl;
  if (!c.ok) ++failures;
}

template <typename F>
void guarded(int id, const std::string& title, F&& body) {
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail << " [exception: " << e.what() << "]";
  }
  report(id, title, c);
}

// Exact sum of the lowest k+1 binomial coefficients, for n small enough to fit in 64 bits.
std::uint64_t exact_choose_sum(unsigned n, unsigned k) {
  std::vector<std::uint64_t> row{1};
  for (unsigned i = 1; i <= n; ++i) {
    std::vector<std::uint64_t> next(i + 1, 1);
    for (unsigned j = 1; j < i; ++j) next[j] = row[j - 1] + row[j];
    row = std::move(next);
  }
  std::uint64_t s = 0;
  for (unsigned j = 0; j <= k; ++j) s += row[j];
  return s;
}

double enumerate_cdf(const std::vector<double>& p, std::size_t t) {
  const std::size_t n = p.size();
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double prob = 1.0;
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) {
        prob *= p[i];
        ++ones;
      } else {
        prob *= 1.0 - p[i];
      }
    }
    if (ones <= t) total += prob;
  }
  return total;
}

// Fourth-order central differences on a seeded sample of coordinates per tensor.
// Same stencil and error measure as gradient_error, which visits every coordinate.
double sampled_gradient_error(const std::function<double()>& loss, const std::function<void()>& analytic,
                              const std::vector<am::Tensor*>& targets, double step, std::size_t per_tensor,
                              std::uint64_t seed, std::size_t& visited) {
  for (auto* t : targets) t->zero_grad();
  analytic();
  am::Rng rng(seed);
  double worst = 0.0;
  visited = 0;
  for (auto* t : targets) {
    std::vector<std::size_t> idx(t->size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_tensor) {
      const auto perm = rng.permutation(idx.size());
      idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(per_tensor));
    }
    for (auto i : idx) {
      const double g = t->grad()[i];
      const double saved = (*t)[i];
      double f[4];
      const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
      for (int k = 0; k < 4; ++k) {
        (*t)[i] = saved + offsets[k] * step;
        f[k] = loss();
      }
      (*t)[i] = saved;
      const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
      worst = std::max(worst, std::abs(g - numeric) / (std::abs(numeric) + 1e-8));
      ++visited;
    }
  }
  return worst;
}

std::unique_ptr<am::Layer> desk_layer(am::LayerKind kind, am::Rng& rng, am::Shape& in) {
  using am::LayerKind;
  in = {17, 32};
  switch (kind) {
    case LayerKind::linear: return std::make_unique<am::Linear>(32, 32, rng);
    case LayerKind::layernorm: {
      auto ln = std::make_unique<am::LayerNorm>(32);
      for (auto* p : ln->parameters()) p->value = am::Tensor::randn(p->value.shape(), rng);
      return ln;
    }
    case LayerKind::gelu: return std::make_unique<am::Gelu>();
    case LayerKind::sigmoid: return std::make_unique<am::Sigmoid>();
    case LayerKind::attention: return std::make_unique<am::MultiHeadAttention>(32, 4, rng);
    case LayerKind::transformer_block: return std::make_unique<am::TransformerBlock>(32, 4, 4, rng, "block");
    case LayerKind::patchify:
      in = {1, 16, 16};
      return std::make_unique<am::Patchify>(am::ImageShape{1, 16, 16}, 4, 32, rng);
  }
  return nullptr;
}

struct Desk {
  am::ArchConfig arch;
  std::unique_ptr<am::ToyVfm> model;
  std::vector<am::SyntheticImageSpec> specs;
  std::vector<am::Tensor> triggers;
  am::TrainConfig cfg;
  std::optional<am::TrainResult> result;
  double train_seconds = 0.0;
};

std::unique_ptr<Desk> run_desk() {
  auto d = std::make_unique<Desk>();
  d->model = std::make_unique<am::ToyVfm>(d->arch, am::derive_seed(kFixtureSeed, kModelInit));
  d->specs = am::synthetic_specs(32, am::derive_seed(kFixtureSeed, kTriggerImages), d->arch.image);
  d->triggers = am::generate_images(d->specs);
  d->cfg.seed = kFixtureSeed;
  const auto start = Clock::now();
  d->result.emplace(am::train_watermark(*d->model, d->cfg, d->triggers, am::synthetic_refs(d->specs, d->triggers)));
  d->train_seconds = seconds_since(start);
  return d;
}

// Serialized artifacts of one pipeline run: key, marked checkpoint and the report on the marked model.
struct Artifacts {
  std::string key, checkpoint, report;
};

Artifacts artifacts_of(Desk& d) {
  am::ToyVfm marked = d.result->marked;
  const auto policy = am::default_policy(d.result->key.N(), d.result->key.tau);
  const auto rep = am::verify_suspect(marked, d.result->key, d.triggers, policy, "marked");
  return {am::encode_key(d.result->key), am::encode_checkpoint(d.result->marked, {kFixtureSeed, {"embed"}}),
          am::report_to_json(rep).dump(2)};
}

}  // namespace

int main() {
  std::cout.setf(std::ios::fmtflags(0), std::ios::floatfield);
  std::cout.precision(6);

  guarded(1, "exact binomial tail and threshold", [](Check& c) {
    const auto start = Clock::now();
    const double expect = static_cast<double>(exact_choose_sum(32, 5)) / std::ldexp(1.0, 32);
    const double tail = am::binomial_tail(32, 0.5, 5);
    const auto t4 = am::select_threshold(32, 0.5, 1e-4);
    const auto t10 = am::select_threshold(32, 0.5, 1e-10);
    const double elapsed = seconds_since(start);
    c.detail << " tail=" << tail << " oracle=" << expect << " tau(1e-4)=" << (t4 ? std::to_string(*t4) : "none")
             << " tau(1e-10)=" << (t10 ? std::to_string(*t10) : "none") << " time=" << elapsed << "s";
    c.require(exact_choose_sum(32, 5) == 242825, "integer sum is 242825");
    c.require(std::abs(tail - expect) <= 1e-12, "|tail - oracle| <= 1e-12");
    c.require(t4 == std::optional<std::size_t>(5), "threshold 5");
    c.require(!t10.has_value(), "no threshold at 1e-10");
    c.require(elapsed < 1.0, "runtime < 1 s");
  });

  guarded(2, "Poisson-binomial DP vs enumeration", [](Check& c) {
    am::Rng rng(2024);
    double worst = 0.0;
    for (int v = 0; v < 50; ++v) {
      const std::size_t n = 1 + rng.below(12);
      std::vector<double> p(n);
      for (auto& x : p) x = rng.uniform();
      for (std::size_t t = 0; t <= n; ++t)
        worst = std::max(worst, std::abs(am::poisson_binomial_cdf(p, t) - enumerate_cdf(p, t)));
    }
    std::vector<double> big(1000);
    for (auto& x : big) x = rng.uniform();
    const auto start = Clock::now();
    const double cdf = am::poisson_binomial_cdf(big, 500);
    const double sf = am::poisson_binomial_sf(big, 500);
    const double elapsed = seconds_since(start);
    c.detail << " max_abs_err=" << worst << " N=1000 cdf=" << cdf << " time=" << elapsed << "s";
    c.require(worst <= 1e-12, "max abs error <= 1e-12");
    c.require(std::isfinite(cdf) && std::abs(cdf + sf - 1.0) <= 1e-12, "N=1000 cdf + sf = 1");
    c.require(elapsed < 1.0, "N=1000 < 1 s");
  });

  guarded(3, "Clopper-Pearson closed forms and coverage", [](Check& c) {
    double worst = 0.0;
    for (auto [m, a] : {std::pair<std::size_t, double>{10, 0.05}, {1000, 5e-6}}) {
      const double l = am::clopper_pearson(m, m, a, am::BoundSide::lower);
      worst = std::max(worst, std::abs(l - std::pow(a, 1.0 / static_cast<double>(m))));
    }
    const double alpha = 0.05, p = 0.7;
    const std::size_t trials = 200, replicates = 2000;
    am::Rng rng(31);
    std::size_t covered = 0;
    for (std::size_t r = 0; r < replicates; ++r) {
      std::size_t k = 0;
      for (std::size_t i = 0; i < trials; ++i) k += rng.bernoulli(p) ? 1 : 0;
      if (am::clopper_pearson(k, trials, alpha, am::BoundSide::lower) <= p) ++covered;
    }
    const double coverage = 100.0 * static_cast<double>(covered) / static_cast<double>(replicates);
    c.detail << " closed_form_err=" << worst << " coverage=" << coverage << "%";
    c.require(worst <= 1e-9, "closed form within 1e-9");
    c.require(coverage >= (1.0 - alpha) * 100.0 - 2.0, "coverage >= 93%");
  });

  guarded(4, "gradient soundness", [](Check& c) {
    const auto start = Clock::now();
    using am::LayerKind;
    double worst_layer = 0.0;
    for (auto kind : {LayerKind::linear, LayerKind::layernorm, LayerKind::gelu, LayerKind::sigmoid,
                      LayerKind::attention, LayerKind::patchify, LayerKind::transformer_block}) {
      am::Rng rng(am::derive_seed(404, static_cast<std::uint64_t>(kind)));
      am::Shape in;
      auto layer = desk_layer(kind, rng, in);
      const double err = am::grad_check(*layer, am::Tensor::randn(in, rng), 1e-3, 5);
      c.detail << " " << am::to_string(kind) << "=" << err;
      c.require(err <= 1e-4, std::string(am::to_string(kind)) + " <= 1e-4");
      worst_layer = std::max(worst_layer, err);
    }

    // Full loss on the desk model. The suffix is moved off the original weights so the
    // fidelity term is evaluated away from its non-differentiable point.
    am::ArchConfig arch;
    am::ToyVfm original(arch, am::derive_seed(kFixtureSeed, kModelInit));
    am::ToyVfm marked = original;
    am::Rng noise(17);
    for (auto* p : marked.suffix_parameters())
      for (auto& v : p->value.data()) v += 0.02 * noise.normal();
    const auto images =
        am::generate_images(am::synthetic_specs(3, am::derive_seed(kFixtureSeed, kTriggerImages), arch.image));
    am::Rng mrng(5);
    const auto messages = am::sample_messages(mrng, images.size(), 8);
    am::Encoder enc(arch.width, 8, am::derive_seed(kFixtureSeed, 2));
    am::Decoder dec(arch.embed_dim, 8, am::derive_seed(kFixtureSeed, 3));
    std::vector<am::Tensor> clean, hidden;
    for (const auto& x : images) {
      clean.push_back(original.embed(x));
      hidden.push_back(marked.prefix(x));
    }
    const double lambda = 1.0;
    auto loss = [&] {
      double total = 0.0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        am::Tensor u = marked.suffix(hidden[i]);
        am::SoftMessage soft = dec.decode(marked.suffix(am::inject(enc, hidden[i], messages[i])));
        total += am::watermark_loss(clean[i], u, messages[i], soft, lambda);
      }
      return total;
    };
    auto analytic = [&] {
      marked.zero_grad();
      for (auto* p : enc.parameters()) p->value.zero_grad();
      for (auto* p : dec.parameters()) p->value.zero_grad();
      for (std::size_t i = 0; i < images.size(); ++i) {
        am::Tensor u = marked.suffix(hidden[i]);
        marked.suffix_backward(am::fidelity_gradient(clean[i], u));
        am::SoftMessage soft = dec.decode(marked.suffix(am::inject(enc, hidden[i], messages[i])));
        auto terms = am::watermark_loss_terms(clean[i], u, messages[i], soft, lambda);
        am::Tensor d_hidden = marked.suffix_backward(dec.backward(terms.d_soft));
        enc.backward(d_hidden.row_copy(0));
      }
    };
    std::vector<am::Tensor*> targets;
    for (auto* p : enc.parameters()) targets.push_back(&p->value);
    for (auto* p : dec.parameters()) targets.push_back(&p->value);
    for (auto* p : marked.suffix_parameters()) targets.push_back(&p->value);
    std::size_t visited = 0;
    const double full = sampled_gradient_error(loss, analytic, targets, 1e-3, 24, 77, visited);
    const double elapsed = seconds_since(start);
    c.detail << " full_loss=" << full << " (" << visited << " coords, " << targets.size() << " tensors)"
             << " time=" << elapsed << "s";
    c.require(full <= 1e-4, "full loss <= 1e-4");
    c.require(elapsed < 60.0, "suite < 60 s");
  });

  std::unique_ptr<Desk> desk;
  guarded(5, "desk embedding", [&](Check& c) {
    desk = run_desk();
    auto& d = *desk;
    am::ToyVfm marked = d.result->marked;
    const auto det = am::detection_rate(marked, d.result->key, d.triggers, 0);
    const double rate = static_cast<double>(det.rate) / static_cast<double>(d.result->key.N());

    const auto holdout =
        am::generate_images(am::synthetic_specs(64, am::derive_seed(kFixtureSeed, kHoldoutImages), d.arch.image));
    am::ToyVfm original = *d.model;
    double drift = 0.0;
    for (const auto& x : holdout) {
      const am::Tensor f = original.embed(x);
      const am::Tensor g = marked.embed(x);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        num += (f[i] - g[i]) * (f[i] - g[i]);
        den += f[i] * f[i];
      }
      drift += std::sqrt(num) / std::sqrt(den);
    }
    drift /= static_cast<double>(holdout.size());

    bool prefix_same = true;
    const auto before = d.model->parameters();
    const auto after = marked.parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (!before[i]->frozen) continue;
      prefix_same &= before[i]->value.data().size() == after[i]->value.data().size() &&
                     std::equal(before[i]->value.data().begin(), before[i]->value.data().end(),
                                after[i]->value.data().begin());
    }
    std::size_t frozen = 0;
    for (auto* p : after) frozen += p->frozen ? 1 : 0;

    c.detail << " R(0)=" << det.rate << "/" << d.result->key.N() << " drift=" << drift << " frozen_tensors=" << frozen
             << " prefix_identical=" << (prefix_same ? "yes" : "no") << " time=" << d.train_seconds << "s";
    c.require(rate >= 0.9, "R(0)/N >= 0.9");
    c.require(drift <= 0.1, "mean relative drift <= 0.1");
    c.require(frozen > 0 && prefix_same, "prefix bit-identical");
    c.require(d.train_seconds < 600.0, "runtime < 10 min");
  });

  std::vector<am::ToyVfm> independents;
  std::size_t best_independent_tau2 = 0;
  guarded(6, "independent models", [&](Check& c) {
    if (!desk) throw std::runtime_error("desk fixture unavailable");
    auto& key = desk->result->key;
    for (std::size_t i = 0; i < kIndependentModels; ++i)
      independents.push_back(am::make_independent(desk->arch, am::derive_seed(1000 + i, kModelInit)));
    double lo = 1.0, hi = 0.0;
    std::size_t worst_r0 = 0;
    for (auto& m : independents) {
      const auto ex = am::extract_all(m, key, desk->triggers);
      double matched = 0.0;
      for (auto k : ex.matches) matched += static_cast<double>(k);
      const double rate = matched / static_cast<double>(key.N() * key.n);
      lo = std::min(lo, rate);
      hi = std::max(hi, rate);
      worst_r0 = std::max(worst_r0, am::detection_rate(ex.distances, 0));
      best_independent_tau2 = std::max(best_independent_tau2, am::detection_rate(ex.distances, 2));
    }
    const auto xi = am::estimate_bit_match(independents, key, desk->triggers, 0.05, am::Population::xi);
    const auto policy = am::calibrate_policy(xi, nullptr, key.n, 0, 1e-4, 0.01, 0.01);
    std::size_t independent_verdicts = 0;
    for (auto& m : independents) {
      if (am::verify_suspect(m, key, desk->triggers, policy).verdict == am::Verdict::independent)
        ++independent_verdicts;
    }
    const double max_u = *std::max_element(xi.upper.begin(), xi.upper.end());
    c.detail << " bit_match=[" << lo << "," << hi << "] max R(0)=" << worst_r0 << "/" << key.N()
             << " max u(x)=" << max_u << " r_lower=" << policy.r_lower << " independent=" << independent_verdicts
             << "/" << independents.size();
    c.require(lo >= 0.3 && hi <= 0.7, "per-model bit match in [0.3, 0.7]");
    c.require(static_cast<double>(worst_r0) <= 0.05 * static_cast<double>(key.N()), "R(0)/N <= 0.05");
    c.require(independent_verdicts == independents.size(), "all verdicts independent");
  });

  guarded(7, "pruning robustness and exactness", [&](Check& c) {
    if (!desk || independents.empty()) throw std::runtime_error("earlier fixtures unavailable");
    auto pruned = am::prune_l1(desk->result->marked, 0.2);
    const auto r2 = am::detection_rate(pruned, desk->result->key, desk->triggers, 2).rate;
    c.detail << " pruned R(2)=" << r2 << " best independent R(2)=" << best_independent_tau2;
    c.require(r2 > best_independent_tau2, "pruned R(2) > best independent R(2)");

    const std::size_t count = am::prunable_weight_count(desk->result->marked);
    for (double fraction : {0.0, 0.2, 0.4, 1.0}) {
      const auto p = am::prune_l1(desk->result->marked, fraction);
      const auto before = desk->result->marked.parameters();
      const auto after = p.parameters();
      std::size_t zeroed = 0, changed_survivors = 0, touched_other = 0;
      for (std::size_t i = 0; i < before.size(); ++i) {
        const auto& b = before[i]->value.data();
        const auto& a = after[i]->value.data();
        for (std::size_t j = 0; j < b.size(); ++j) {
          if (before[i]->kind != am::ParamKind::weight) {
            touched_other += a[j] != b[j];
          } else if (a[j] == 0.0 && b[j] != 0.0) {
            ++zeroed;
          } else if (a[j] != b[j]) {
            ++changed_survivors;
          }
        }
      }
      const auto expect = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count)));
      c.detail << " f=" << fraction << ":" << zeroed << "/" << expect;
      c.require(zeroed == expect && changed_survivors == 0 && touched_other == 0,
                "prune exactness at " + std::to_string(fraction));
    }
  });

  guarded(8, "bound soundness", [](Check& c) {
    const std::size_t N = 40, n = 16, tau = 3, M = 200;
    const double alpha = 0.05;
    am::Rng rng(808);
    std::vector<double> r_omega(N), r_xi(N);
    for (auto& r : r_omega) r = 0.9 + 0.08 * rng.uniform();
    for (auto& r : r_xi) r = 0.4 + 0.2 * rng.uniform();

    auto draw_matches = [&](const std::vector<double>& rates, std::size_t models) {
      std::vector<std::size_t> k(N, 0);
      for (std::size_t x = 0; x < N; ++x)
        for (std::size_t b = 0; b < models * n; ++b) k[x] += rng.bernoulli(rates[x]) ? 1 : 0;
      return k;
    };
    const auto omega = am::bit_match_bounds(draw_matches(r_omega, M), M, n, alpha, am::Population::omega);
    const auto xi = am::bit_match_bounds(draw_matches(r_xi, M), M, n, alpha, am::Population::xi);
    // Thresholds placed where both bounds are informative rather than vanishing.
    const auto policy = am::calibrate_policy(xi, &omega, n, tau, 1e-4, 0.2, 0.2);
    const auto b = am::bound_detection_probabilities(omega, xi, policy, n);

    const std::size_t draws = 10000;
    std::size_t below_upper = 0, above_lower = 0;
    for (std::size_t s = 0; s < draws; ++s) {
      std::size_t r_copy = 0, r_indep = 0;
      for (std::size_t x = 0; x < N; ++x) {
        std::size_t miss_copy = 0, miss_indep = 0;
        for (std::size_t i = 0; i < n; ++i) {
          miss_copy += rng.bernoulli(r_omega[x]) ? 0 : 1;
          miss_indep += rng.bernoulli(r_xi[x]) ? 0 : 1;
        }
        r_copy += miss_copy <= tau;
        r_indep += miss_indep <= tau;
      }
      below_upper += r_copy < policy.r_upper;
      above_lower += r_indep > policy.r_lower;
    }
    auto rate_se = [&](std::size_t hits) {
      const double p = static_cast<double>(hits) / static_cast<double>(draws);
      return std::pair{p, std::sqrt(p * (1.0 - p) / static_cast<double>(draws))};
    };
    const auto [emp_omega, se_omega] = rate_se(below_upper);
    const auto [emp_xi, se_xi] = rate_se(above_lower);
    c.detail << " r_lower=" << policy.r_lower << " r_upper=" << policy.r_upper << " P[R<Rup]=" << emp_omega << " bound=" << b.p_omega << " P[R>Rlo]=" << emp_xi
             << " bound=" << b.p_xi;
    c.require(emp_omega <= b.p_omega + 3.0 * se_omega, "copies within bound");
    c.require(emp_xi <= b.p_xi + 3.0 * se_xi, "independents within bound");
    c.require(b.p_omega < 1.0 && b.p_xi < 1.0, "bounds are informative");

    // Reference operating point with synthetic estimates.
    const std::size_t big_n = 32, big_N = 1000, models = 1000;
    std::vector<std::size_t> k_omega(big_N), k_xi(big_N);
    for (std::size_t x = 0; x < big_N; ++x) {
      k_omega[x] = models * big_n - 200 - rng.below(200);
      k_xi[x] = models * big_n / 2 + rng.below(300);
    }
    am::DecisionPolicy op;
    op.tau = 5;
    op.alpha = 5e-6;
    op.r_upper = 750;
    op.r_lower = 600;
    op.validate(big_n, big_N);
    const auto eo = am::bit_match_bounds(k_omega, models, big_n, op.alpha, am::Population::omega);
    const auto ex = am::bit_match_bounds(k_xi, models, big_n, op.alpha, am::Population::xi);
    const auto ob = am::bound_detection_probabilities(eo, ex, op, big_n);
    c.detail << " operating point p_omega=" << ob.p_omega << " p_xi=" << ob.p_xi << " confidence=" << ob.confidence;
    c.require(std::isfinite(ob.p_omega) && std::isfinite(ob.p_xi), "finite bounds at the operating point");
  });

  guarded(9, "determinism", [&](Check& c) {
    if (!desk) throw std::runtime_error("desk fixture unavailable");
    const auto first = artifacts_of(*desk);
    auto again = run_desk();
    const auto second = artifacts_of(*again);
    c.detail << " key=" << first.key.size() << "B checkpoint=" << first.checkpoint.size()
             << "B report=" << first.report.size() << "B";
    c.require(first.key == second.key, "key identical");
    c.require(first.checkpoint == second.checkpoint, "checkpoint identical");
    c.require(first.report == second.report, "report identical");
  });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
