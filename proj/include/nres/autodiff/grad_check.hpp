#pragma once

#include <functional>
#include <vector>

#include "nres/autodiff/tensor.hpp"

namespace nres::ad {

using ScalarFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Max over all input elements of |g_ad - g_fd| / max(1, |g_fd|), where g_fd is
/// the central difference (f(x + eps) - f(x - eps)) / (2 eps).
///
/// `inputs` are leaves; their values are perturbed in place and restored, and
/// their gradient slots are overwritten.
double grad_check(const ScalarFunction& f, std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace nres::ad
