#pragma once

#include <functional>
#include <vector>

#include "dsu/tensor.hpp"

namespace dsu {

/// Scalar objective over a parameter set. Called with grads == nullptr for
/// a plain (forward-only) evaluation; with grads non-null it must also
/// fill one analytic gradient tensor per parameter. Must be deterministic
/// given fixed RNG draws.
using GradObjective =
    std::function<double(const std::vector<Tensor>& params, std::vector<Tensor>* grads)>;

/// Central-difference check: perturbs every parameter element by +/- h,
/// compares against the analytic gradient, and returns
/// max over elements of |analytic - numeric| / max(|analytic|, |numeric|, eps).
double finite_diff_check(const GradObjective& f, std::vector<Tensor> params, double h,
                         double eps = 1e-6);

} // namespace dsu
