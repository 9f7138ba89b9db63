#include "activemark/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "activemark/errors.hpp"
#include "activemark/rng.hpp"

namespace activemark {

double gradient_error(const std::function<double()>& loss, const std::function<void()>& analytic,
                      std::span<Tensor* const> targets, double step) {
  if (!(step > 0.0)) throw ArgumentError("grad_check: step must be positive");
  for (Tensor* t : targets) t->zero_grad();
  analytic();
  std::vector<std::vector<double>> grads;
  grads.reserve(targets.size());
  for (Tensor* t : targets) {
    auto g = t->grad();
    if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericError("grad_check: non-finite analytic gradient");
    }
    grads.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Tensor& t = *targets[ti];
    for (std::size_t i = 0; i < t.size(); ++i) {
      // Fourth-order central stencil: truncation error O(step^4) instead of O(step^2).
      const double saved = t[i];
      double f[4];
      const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
      for (int k = 0; k < 4; ++k) {
        t[i] = saved + offsets[k] * step;
        f[k] = loss();
      }
      t[i] = saved;
      if (!std::all_of(f, f + 4, [](double v) { return std::isfinite(v); })) {
        throw NumericError("grad_check: non-finite loss");
      }
      const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
      const double err = std::abs(grads[ti][i] - numeric) / (std::abs(numeric) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(Layer& layer, const Tensor& x, double step, std::uint64_t seed) {
  Tensor input = x;
  const Tensor probe = layer.forward(input);
  Rng rng(seed);
  const Tensor upstream = Tensor::randn(probe.shape(), rng);
  layer.backward(upstream);

  auto loss = [&]() {
    const Tensor y = layer.forward(input);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += upstream[i] * y[i];
    return acc;
  };
  auto analytic = [&]() {
    layer.zero_grad();
    layer.forward(input);
    const Tensor dx = layer.backward(upstream);
    auto g = input.grad();
    std::copy(dx.data().begin(), dx.data().end(), g.begin());
  };

  std::vector<Tensor*> targets;
  for (Parameter* p : layer.parameters()) targets.push_back(&p->value);
  targets.push_back(&input);
  return gradient_error(loss, analytic, targets, step);
}

}  // namespace activemark
