#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "cgns/tensor.hpp"

namespace cgns {

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences. Returns the max over coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double epsilon = 1e-5) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
  Tensor x = point.detach();
  x.set_requires_grad();
  x.zero_grad();
  {
    Tape tape;
    Tensor y = f(x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
    backward(y);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x.detach();
    Tensor xm = x.detach();
    xp[i] += epsilon;
    xm[i] -= epsilon;
    const double fp = f(xp).scalar_value();
    const double fm = f(xm).scalar_value();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite value at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double analytic = x.grad()[i];
    if (!std::isfinite(analytic))
      throw std::runtime_error("grad_check: non-finite gradient at coordinate " + std::to_string(i));
    const double err = std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cgns
