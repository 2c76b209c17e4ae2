#include "nres/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "nres/error.hpp"

namespace nres::ad {

double grad_check(const ScalarFunction& f, std::vector<Tensor>& inputs, double eps) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor loss = f(inputs);
  if (loss.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  loss.backward();

  double worst = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                : std::vector<double>(x.numel(), 0.0);
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + eps;
        plus = f(inputs).item();
        values[i] = saved - eps;
        minus = f(inputs).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace nres::ad
