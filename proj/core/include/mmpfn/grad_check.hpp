#pragma once

#include <functional>
#include <span>

#include "mmpfn/tensor.hpp"

namespace mmpfn {

// Denominator floor of the relative error. Central differences with h = 1e-5
// carry roughly 1e-11 of rounding noise on O(1) losses, so a coordinate whose
// true gradient is exactly zero (e.g. a key bias under softmax) would
// otherwise report noise / tiny as a failure.
inline constexpr double kGradCheckFloor = 1e-6;

// Largest coordinate-wise relative error between the tape gradient of a scalar
// function and a central finite difference with step h:
//   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, kGradCheckFloor).
// f must be deterministic; a non-deterministic f gives a meaningless result.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Same check over every coordinate of a parameter list; the parameters are
// perturbed in place and restored. `loss` rebuilds the forward pass each call.
double grad_check_parameters(const std::function<Tensor()>& loss, std::span<Tensor> parameters,
                             double h = 1e-5);

}  // namespace mmpfn
