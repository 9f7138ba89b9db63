#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "activemark/layers.hpp"
#include "activemark/tensor.hpp"

namespace activemark {

/// Largest |analytic - numeric| / (|numeric| + 1e-8) over every element of `targets`.
///
/// `loss` evaluates the scalar objective at the current values of the targets.
/// `analytic` must leave dL/dtarget in each target's grad buffer. Numeric
/// derivatives are central differences with the given step.
double gradient_error(const std::function<double()>& loss, const std::function<void()>& analytic,
                      std::span<Tensor* const> targets, double step);

/// Finite-difference check of one layer's backward pass on input x.
///
/// The scalar objective is sum(g * layer(x)) for a fixed random upstream
/// gradient g drawn from `seed`; both parameters and the input are checked.
double grad_check(Layer& layer, const Tensor& x, double step, std::uint64_t seed = 7);

}  // namespace activemark
