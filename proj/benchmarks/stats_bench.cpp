#include <benchmark/benchmark.h>

#include <vector>

#include "activemark/rng.hpp"
#include "activemark/stats.hpp"

namespace activemark {
namespace {

std::vector<double> random_probs(std::size_t count) {
  Rng rng(9);
  std::vector<double> p(count);
  for (auto& v : p) v = rng.uniform();
  return p;
}

void BM_PoissonBinomialCdf(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto probs = random_probs(n);
  for (auto _ : state) benchmark::DoNotOptimize(poisson_binomial_cdf(probs, n / 2));
}
BENCHMARK(BM_PoissonBinomialCdf)->Arg(32)->Arg(1000)->Unit(benchmark::kMicrosecond);

void BM_PoissonBinomialSf(benchmark::State& state) {
  const auto probs = random_probs(1000);
  for (auto _ : state) benchmark::DoNotOptimize(poisson_binomial_sf(probs, 600));
}
BENCHMARK(BM_PoissonBinomialSf)->Unit(benchmark::kMicrosecond);

void BM_ClopperPearson(benchmark::State& state) {
  const auto trials = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(clopper_pearson(trials * 7 / 10, trials, 0.05, BoundSide::lower));
    benchmark::DoNotOptimize(clopper_pearson(trials / 2, trials, 5e-6, BoundSide::upper));
  }
}
BENCHMARK(BM_ClopperPearson)->Arg(10)->Arg(1000)->Arg(32000);

void BM_BinomialTail(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(binomial_tail(32, 0.5, 5));
}
BENCHMARK(BM_BinomialTail);

void BM_SelectThreshold(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(select_threshold(120, 0.5, 1e-6));
}
BENCHMARK(BM_SelectThreshold);

}  // namespace
}  // namespace activemark

BENCHMARK_MAIN();
