#pragma once

#include <functional>
#include <vector>

#include "owdfa/autodiff.hpp"

namespace owdfa {

/// Scalar-valued function of a list of tensors, built on the graph it is given.
using GradCheckFn =
    std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// numeric gradients by central differences with step `h`.
double grad_check(const GradCheckFn& f, std::vector<Tensor<double>> point, double h = 1e-4);

}  // namespace owdfa
