#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mpec/num/autograd.hpp"

namespace mpec::num {

// Scalar-valued function of one input, evaluated on a fresh tape each call.
using ScalarFn = std::function<Var(Tape&, Var)>;
// Scalar-valued function of several inputs.
using MultiScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Throws NumericalError when f is not deterministic across probe evaluations.
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Per-input maximum relative error, same metric as grad_check.
std::vector<double> grad_check_many(const MultiScalarFn& f,
                                    const std::vector<Tensor>& inputs,
                                    double h = 1e-5);

}  // namespace mpec::num
