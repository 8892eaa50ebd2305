#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cgns/feasibility.hpp"
#include "cgns/gradcheck.hpp"
#include "cgns/metrics.hpp"
#include "cgns/model.hpp"
#include "cgns/rng.hpp"

namespace cgns {

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline VerifyCheck check_autodiff() {
  VerifyCheck c{"autodiff-primitives"};
  // one composite touching matmul, transpose, softmax, conv, pooling, and
  // the pointwise family, evaluated away from relu kinks
  Tensor weight = Tensor::from({1, 1, 3, 3}, {0.2, -0.1, 0.3, 0.0, 0.5, -0.2, 0.1, 0.1, -0.4});
  Tensor bias = Tensor::from({1}, {0.05});
  auto f = [&](const Tensor& x) {
    Tensor a = sum(softmax(matmul(x, transpose(x))));
    Tensor b = mean(square(tanh_t(x)));
    Tensor cimg = sum(avg_pool2d(conv2d(reshape(x, {1, 2, 4}), weight, bias, 1, 1), 1, 2));
    Tensor d = sum(sigmoid(x));
    Tensor e = sum(exp_t(mul_scalar(x, 0.1)));
    Tensor g = sum(log_t(add_scalar(square(x), 1.0)));
    return add(add(add(a, b), add(cimg, d)), add(e, g));
  };
  Tensor point = Tensor::from({2, 4}, {0.3, -0.7, 1.1, 0.4, -0.2, 0.9, -1.3, 0.6});
  const double err = grad_check(f, point, 1e-5);
  c.pass = err <= 1e-4;
  c.detail = "max relative gradient error " + std::to_string(err);
  return c;
}

inline VerifyCheck check_loss_identities() {
  VerifyCheck c{"loss-identities"};
  std::ostringstream why;
  bool ok = true;
  Tensor truth = Tensor::zeros({1, 4});
  Tensor pred = Tensor::from({1, 4}, {3, 4, 0, 0});
  Tensor mask = Tensor::from({1, 4}, {1, 1, 0, 0});
  if (std::fabs(loss_rc(pred, truth, mask)[0] - 25.0) > 1e-12) {
    ok = false;
    why << "reconstruction of a (3,4) offset != 25; ";
  }
  auto s = [](double v) { return Tensor::from({1, 1}, {v}); };
  if (std::fabs(loss_g_vdm({s(1), s(-1)})[0] - 0.5) > 1e-12) {
    ok = false;
    why << "generator loss at scores (1,-1) != 0.5; ";
  }
  if (std::fabs(loss_d_vdm({s(1)}, {s(-1)})[0]) > 1e-12 || std::fabs(loss_d_vdm({s(0)}, {s(0)})[0] - 1.0) > 1e-12) {
    ok = false;
    why << "discriminator loss identities broken; ";
  }
  c.pass = ok;
  c.detail = ok ? "reconstruction and least-squares identities hold" : why.str();
  return c;
}

inline VerifyCheck check_kl(bool inject_error) {
  VerifyCheck c{inject_error ? "kl-monte-carlo (mutated)" : "kl-monte-carlo"};
  // exact anchors first
  LatentGaussian unit{Tensor::zeros({1, 2}), Tensor::zeros({1, 2})};
  if (std::fabs(loss_kl(unit)[0]) > 1e-12) {
    c.detail = "unit posterior KL != 0";
    return c;
  }
  LatentGaussian one{Tensor::from({1, 1}, {1.0}), Tensor::zeros({1, 1})};
  if (std::fabs(loss_kl(one)[0] - 0.5) > 1e-12) {
    c.detail = "1-D unit-mean KL != 0.5";
    return c;
  }
  Rng rng(101);
  const int n = 100000;
  bool ok = true;
  double worst_sigma = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double mu0 = rng.uniform(-1.5, 1.5), mu1 = rng.uniform(-1.5, 1.5);
    const double lv0 = rng.uniform(-1.5, 1.5), lv1 = rng.uniform(-1.5, 1.5);
    LatentGaussian lat{Tensor::from({1, 2}, {mu0, mu1}), Tensor::from({1, 2}, {lv0, lv1})};
    double analytic = loss_kl(lat)[0];
    // the mutation sentinel replaces the "-1" constant in the closed form
    if (inject_error) analytic += 0.5 * 2;  // as if the constant were 0
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
      double sample = 0.0;
      for (int d = 0; d < 2; ++d) {
        const double mu = lat.mean[d], lv = lat.log_var[d];
        const double sd = std::exp(0.5 * lv);
        const double z = mu + sd * rng.normal();
        sample += -0.5 * ((z - mu) * (z - mu) / (sd * sd) + lv) + 0.5 * z * z;
      }
      const double delta = sample - mean;
      mean += delta / (i + 1);
      m2 += delta * (sample - mean);
    }
    const double se = std::sqrt(m2 / (static_cast<double>(n) - 1) / n);
    const double sigmas = std::fabs(analytic - mean) / se;
    worst_sigma = std::max(worst_sigma, sigmas);
    if (sigmas > 3.0) ok = false;
  }
  c.pass = ok;
  c.detail = "worst deviation " + std::to_string(worst_sigma) + " standard errors over 20 latents";
  return c;
}

inline VerifyCheck check_vdm_oracle() {
  VerifyCheck c{"vdm-tabular-oracle"};
  Rng rng(102);
  double worst = 0.0;
  bool chi_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.integer(15);
    std::vector<double> pv(n), qv(n);
    double ps = 0, qs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pv[i] = rng.uniform(0.0, 1.0);
      qv[i] = rng.uniform(0.0, 1.0);
      ps += pv[i];
      qs += qv[i];
    }
    double accp = 0, accq = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      pv[i] /= ps;
      qv[i] /= qs;
      accp += pv[i];
      accq += qv[i];
    }
    pv[n - 1] = 1.0 - accp;
    qv[n - 1] = 1.0 - accq;
    DiscreteDistribution p(pv), q(qv);
    auto closed = tabular_optimal_discriminator(p, q);
    for (std::size_t i = 0; i < n; ++i) {
      if (p.p[i] + q.p[i] <= 1e-12) continue;
      const double numeric = golden_section_minimize(
          [&](double sc) {
            return 0.5 * p.p[i] * (sc - 1) * (sc - 1) + 0.5 * q.p[i] * (sc + 1) * (sc + 1);
          },
          -2.0, 2.0);
      worst = std::max(worst, std::fabs(closed[i] - numeric));
    }
    if (pearson_chi2(p, p) > 1e-12) chi_ok = false;
    bool same = true;
    for (std::size_t i = 0; i < n; ++i)
      if (std::fabs(p.p[i] - q.p[i]) > 1e-12) same = false;
    if (!same && pearson_chi2(p, q) <= 1e-12) chi_ok = false;
  }
  c.pass = worst <= 1e-6 && chi_ok;
  c.detail = "worst closed-form vs numeric gap " + std::to_string(worst);
  return c;
}

inline VerifyCheck check_curvature() {
  VerifyCheck c{"curvature-and-feasibility"};
  std::ostringstream why;
  bool ok = true;
  for (double R : {5.0, 10.0, 20.0}) {
    std::vector<Vec2> circle;
    for (int i = 0; i < 36; ++i) {
      const double a = 2.0 * 3.14159265358979323846 * i / 36;
      circle.push_back({R * std::cos(a), R * std::sin(a)});
    }
    for (auto r : curvatures(circle).kappa)
      if (std::fabs(r - 1.0 / R) > 0.02 / R) {
        ok = false;
        why << "circle R=" << R << " curvature off by >2%; ";
        break;
      }
  }
  std::vector<Vec2> straight = {{0, 0}, {1, 0.5}, {2, 1}, {3, 1.5}};
  for (auto r : curvatures(straight).kappa)
    if (r != 0.0) {
      ok = false;
      why << "straight path curvature nonzero; ";
    }
  // indicator mode equals alpha x violation count
  std::vector<Vec2> spike = {{0, 0}, {1, 0}, {3, 0}, {6, 0}, {10, 0}};
  KinematicLimits lim{0.5, 10.0, 1.0};
  const double indicator = feasibility_penalty(spike, lim, 7.0, 3.0, FeasibilitySurrogate::Indicator);
  const auto acc = accelerations(spike, lim.dt);
  int count = 0;
  for (double a : acc)
    if (a > lim.a_max) ++count;
  if (std::fabs(indicator - 7.0 * count) > 1e-12) {
    ok = false;
    why << "indicator != alpha * violation count; ";
  }
  c.pass = ok;
  c.detail = ok ? "circle, straight, and indicator identities hold" : why.str();
  return c;
}

}  // namespace detail

/// Runs the quick numerical verification suite. `inject_kl_error` is a
/// mutation sentinel: it deliberately corrupts the analytic KL constant so
/// the Monte-Carlo check must fail, proving the check has teeth.
inline std::vector<VerifyCheck> run_verification(bool inject_kl_error = false) {
  return {detail::check_autodiff(), detail::check_loss_identities(), detail::check_kl(inject_kl_error),
          detail::check_vdm_oracle(), detail::check_curvature()};
}

}  // namespace cgns
