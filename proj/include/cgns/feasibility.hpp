#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cgns/tensor.hpp"

namespace cgns {

using Vec2 = std::array<double, 2>;

struct KinematicLimits {
  double a_max = 4.0;      // distance/s^2
  double kappa_max = 0.2;  // 1/distance
  double dt = 0.5;         // seconds per step

  void validate() const {
    if (!(a_max > 0.0) || !(kappa_max > 0.0) || !(dt > 0.0))
      throw std::invalid_argument("kinematic limits must be strictly positive");
  }
};

inline constexpr double kSpeedFloor = 1e-6;

/// Speed floor (distance per step) inside the *training* curvature surrogate.
/// The measured curvature divides by speed cubed, so a near-stationary
/// segment would otherwise produce unbounded values and gradients that trap
/// the generator early in training; below this floor the surrogate decays to
/// zero, matching the metric's convention that stationary curvature is zero.
inline constexpr double kCurvatureSmoothing = 0.1;

/// Central second differences: a_t = |p_{t+1} - 2 p_t + p_{t-1}| / dt^2,
/// defined at the T-2 interior points.
inline std::vector<double> accelerations(const std::vector<Vec2>& waypoints, double dt) {
  if (waypoints.size() < 3)
    throw std::invalid_argument("accelerations: need at least 3 waypoints, got " +
                                std::to_string(waypoints.size()));
  std::vector<double> out(waypoints.size() - 2);
  const double inv = 1.0 / (dt * dt);
  for (std::size_t t = 1; t + 1 < waypoints.size(); ++t) {
    const double ax = waypoints[t + 1][0] - 2.0 * waypoints[t][0] + waypoints[t - 1][0];
    const double ay = waypoints[t + 1][1] - 2.0 * waypoints[t][1] + waypoints[t - 1][1];
    out[t - 1] = std::hypot(ax, ay) * inv;
  }
  return out;
}

struct CurvatureResult {
  std::vector<double> kappa;          // T-2 values at interior points
  std::vector<bool> stationary;       // true where the speed floor kicked in
};

/// kappa_t = |x' y'' - y' x''| / (x'^2 + y'^2)^{3/2}, central differences.
/// Below the speed floor kappa is defined as 0 and flagged.
inline CurvatureResult curvatures(const std::vector<Vec2>& waypoints) {
  if (waypoints.size() < 3)
    throw std::invalid_argument("curvatures: need at least 3 waypoints, got " +
                                std::to_string(waypoints.size()));
  CurvatureResult res;
  res.kappa.resize(waypoints.size() - 2);
  res.stationary.resize(waypoints.size() - 2, false);
  for (std::size_t t = 1; t + 1 < waypoints.size(); ++t) {
    const double xp = 0.5 * (waypoints[t + 1][0] - waypoints[t - 1][0]);
    const double yp = 0.5 * (waypoints[t + 1][1] - waypoints[t - 1][1]);
    const double xpp = waypoints[t + 1][0] - 2.0 * waypoints[t][0] + waypoints[t - 1][0];
    const double ypp = waypoints[t + 1][1] - 2.0 * waypoints[t][1] + waypoints[t - 1][1];
    const double speed2 = xp * xp + yp * yp;
    if (speed2 < kSpeedFloor * kSpeedFloor) {
      res.kappa[t - 1] = 0.0;
      res.stationary[t - 1] = true;
      continue;
    }
    res.kappa[t - 1] = std::fabs(xp * ypp - yp * xpp) / (speed2 * std::sqrt(speed2));
  }
  return res;
}

enum class FeasibilitySurrogate { Hinge, Indicator };

/// Plain-double feasibility penalty for one trajectory. Hinge mode is the
/// training surrogate; indicator mode counts violating steps and matches the
/// barrier formulation literally (it is reported as a metric, not trained).
inline double feasibility_penalty(const std::vector<Vec2>& waypoints, const KinematicLimits& limits,
                                  double alpha1, double alpha2, FeasibilitySurrogate surrogate) {
  limits.validate();
  const auto acc = accelerations(waypoints, limits.dt);
  double total = 0.0;
  for (double a : acc) {
    const double over = a - limits.a_max;
    if (surrogate == FeasibilitySurrogate::Hinge)
      total += alpha1 * std::max(0.0, over);
    else if (over > 0.0)
      total += alpha1;
  }
  if (surrogate == FeasibilitySurrogate::Hinge) {
    // same smoothed curvature as the differentiable surrogate, so the two
    // formulations agree to rounding
    for (std::size_t t = 1; t + 1 < waypoints.size(); ++t) {
      const double xp = 0.5 * (waypoints[t + 1][0] - waypoints[t - 1][0]);
      const double yp = 0.5 * (waypoints[t + 1][1] - waypoints[t - 1][1]);
      const double xpp = waypoints[t + 1][0] - 2.0 * waypoints[t][0] + waypoints[t - 1][0];
      const double ypp = waypoints[t + 1][1] - 2.0 * waypoints[t][1] + waypoints[t - 1][1];
      const double speed2 = xp * xp + yp * yp + kCurvatureSmoothing * kCurvatureSmoothing;
      const double kappa = std::fabs(xp * ypp - yp * xpp) / (speed2 * std::sqrt(speed2));
      total += alpha2 * std::max(0.0, kappa - limits.kappa_max);
    }
  } else {
    for (double k : curvatures(waypoints).kappa)
      if (k > limits.kappa_max) total += alpha2;
  }
  return total;
}

/// Fraction of predicted steps violating either bound, over a set of sampled
/// trajectories. Each trajectory is given with its two prepended observed
/// points so every predicted step has a defined acceleration and curvature.
inline double violation_rate(const std::vector<std::vector<Vec2>>& samples, const KinematicLimits& limits) {
  if (samples.empty()) throw std::invalid_argument("violation_rate: empty sample set");
  limits.validate();
  std::size_t violating = 0, total = 0;
  for (const auto& wp : samples) {
    const auto acc = accelerations(wp, limits.dt);
    const auto curv = curvatures(wp);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      ++total;
      if (acc[i] > limits.a_max || curv.kappa[i] > limits.kappa_max) ++violating;
    }
  }
  return total ? static_cast<double>(violating) / static_cast<double>(total) : 0.0;
}

/// Differentiable hinge feasibility loss over one agent trajectory given as a
/// (T,2) tensor (observed prefix included as constant rows by the caller).
/// Returns alpha1 * sum max(0, a - a_max) + alpha2 * sum max(0, kappa - kappa_max).
inline Tensor feasibility_hinge(const Tensor& points, const KinematicLimits& limits, double alpha1,
                                double alpha2) {
  limits.validate();
  if (points.shape().size() != 2 || points.shape()[1] != 2 || points.shape()[0] < 3)
    throw std::invalid_argument("feasibility_hinge: need (T>=3, 2) points, got " + shape_str(points.shape()));
  const int T = points.shape()[0];
  Tensor prev = slice(points, 0, 0, T - 2);
  Tensor mid = slice(points, 0, 1, T - 2);
  Tensor next = slice(points, 0, 2, T - 2);
  Tensor second = add(sub(next, mul_scalar(mid, 2.0)), prev);          // (T-2,2)
  Tensor first = mul_scalar(sub(next, prev), 0.5);                     // (T-2,2)

  // accelerations: row norms / dt^2; a tiny offset keeps sqrt smooth at zero
  Tensor a2 = sum_rows(mul(second, second));
  Tensor a_mag = mul_scalar(sqrt_t(add_scalar(a2, 1e-18)), 1.0 / (limits.dt * limits.dt));
  Tensor acc_term = sum(relu(add_scalar(a_mag, -limits.a_max)));

  // curvature: |x' y'' - y' x''| / (x'^2 + y'^2 + floor)^{3/2}
  Tensor xp = slice(first, 1, 0, 1);
  Tensor yp = slice(first, 1, 1, 1);
  Tensor xpp = slice(second, 1, 0, 1);
  Tensor ypp = slice(second, 1, 1, 1);
  Tensor cross = abs_t(sub(mul(xp, ypp), mul(yp, xpp)));
  Tensor speed2 = add_scalar(add(mul(xp, xp), mul(yp, yp)), kCurvatureSmoothing * kCurvatureSmoothing);
  Tensor denom = mul(speed2, sqrt_t(speed2));
  Tensor kappa = div(cross, denom);
  Tensor curv_term = sum(relu(add_scalar(kappa, -limits.kappa_max)));

  return add(mul_scalar(acc_term, alpha1), mul_scalar(curv_term, alpha2));
}

}  // namespace cgns
