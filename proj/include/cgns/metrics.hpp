#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cgns/data.hpp"

namespace cgns {

/// Predicted future positions, [slot][T_f], same layout as TrajectoryWindow.
using Prediction = std::vector<std::vector<Vec2>>;

struct HorizonRow {
  double seconds = 0.0;
  double ade = 0.0;
  double fde = 0.0;
};

struct MetricReport {
  double ade = 0.0;
  double fde = 0.0;
  std::vector<HorizonRow> breakdown;
  int sample_count = 1;
  double violation_rate = 0.0;
  // best-of-K companions (equal to ade/fde when K = 1)
  double best_ade = 0.0;
  double best_fde = 0.0;
};

// ---------------------------------------------------------------------------
// Baselines.
// ---------------------------------------------------------------------------

/// Constant velocity: extrapolates the last observed displacement.
inline Prediction cvm_predict(const TrajectoryWindow& w) {
  if (w.T_h < 2) throw std::invalid_argument("cvm_predict: need at least 2 observed steps");
  Prediction pred(w.max_agents, std::vector<Vec2>(w.T_f, {0, 0}));
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    const Vec2& last = w.obs[a][w.T_h - 1];
    const Vec2& prev = w.obs[a][w.T_h - 2];
    const Vec2 v = {last[0] - prev[0], last[1] - prev[1]};
    for (int t = 0; t < w.T_f; ++t) pred[a][t] = {last[0] + v[0] * (t + 1), last[1] + v[1] * (t + 1)};
  }
  return pred;
}

/// Per-coordinate ordinary least squares over the observed steps, then
/// extrapolated over the prediction horizon.
inline Prediction lr_predict(const TrajectoryWindow& w) {
  if (w.T_h < 2) throw std::invalid_argument("lr_predict: need at least 2 observed steps");
  Prediction pred(w.max_agents, std::vector<Vec2>(w.T_f, {0, 0}));
  const int n = w.T_h;
  const double t_mean = (n - 1) / 2.0;
  double sxx = 0.0;
  for (int t = 0; t < n; ++t) sxx += (t - t_mean) * (t - t_mean);
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    for (int c = 0; c < 2; ++c) {
      double y_mean = 0.0;
      for (int t = 0; t < n; ++t) y_mean += w.obs[a][t][c];
      y_mean /= n;
      double sxy = 0.0;
      for (int t = 0; t < n; ++t) sxy += (t - t_mean) * (w.obs[a][t][c] - y_mean);
      const double slope = sxy / sxx;
      const double intercept = y_mean - slope * t_mean;
      for (int t = 0; t < w.T_f; ++t) pred[a][t][c] = intercept + slope * (n + t);
    }
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Displacement metrics (validity-flagged agents only).
// ---------------------------------------------------------------------------

namespace detail {

inline void check_pred_shape(const Prediction& pred, const TrajectoryWindow& w) {
  if (static_cast<int>(pred.size()) != w.max_agents)
    throw std::invalid_argument("metrics: prediction has " + std::to_string(pred.size()) +
                                " agent slots, window has " + std::to_string(w.max_agents));
  for (const auto& traj : pred)
    if (static_cast<int>(traj.size()) != w.T_f)
      throw std::invalid_argument("metrics: prediction horizon " + std::to_string(traj.size()) +
                                  " != T_f " + std::to_string(w.T_f));
}

}  // namespace detail

/// Mean Euclidean distance over valid agents and all predicted steps.
inline double ade(const Prediction& pred, const TrajectoryWindow& w, int horizon_steps = -1) {
  detail::check_pred_shape(pred, w);
  if (horizon_steps < 0) horizon_steps = w.T_f;
  double total = 0.0;
  std::size_t count = 0;
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    for (int t = 0; t < horizon_steps; ++t) {
      total += std::hypot(pred[a][t][0] - w.fut[a][t][0], pred[a][t][1] - w.fut[a][t][1]);
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

/// Mean Euclidean distance at the last predicted step (or at `horizon_steps`).
inline double fde(const Prediction& pred, const TrajectoryWindow& w, int horizon_steps = -1) {
  detail::check_pred_shape(pred, w);
  const int t = (horizon_steps < 0 ? w.T_f : horizon_steps) - 1;
  double total = 0.0;
  std::size_t count = 0;
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    total += std::hypot(pred[a][t][0] - w.fut[a][t][0], pred[a][t][1] - w.fut[a][t][1]);
    ++count;
  }
  return count ? total / count : 0.0;
}

/// Mean-of-K and best-of-K displacement metrics over sampled hypotheses.
/// "Best" selects, per window, the sample with the lowest full-horizon ADE.
inline MetricReport min_of_k(const std::vector<Prediction>& samples, const TrajectoryWindow& w) {
  if (samples.empty()) throw std::invalid_argument("min_of_k: need K >= 1 samples");
  MetricReport rep;
  rep.sample_count = static_cast<int>(samples.size());
  double sum_ade = 0.0, sum_fde = 0.0;
  double best_ade = std::numeric_limits<double>::infinity();
  double best_fde = 0.0;
  for (const auto& s : samples) {
    const double a = ade(s, w);
    const double f = fde(s, w);
    sum_ade += a;
    sum_fde += f;
    if (a < best_ade) {
      best_ade = a;
      best_fde = f;
    }
  }
  rep.ade = sum_ade / rep.sample_count;
  rep.fde = sum_fde / rep.sample_count;
  rep.best_ade = best_ade;
  rep.best_fde = best_fde;
  return rep;
}

inline void write_report_csv(const MetricReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  out << "horizon_s,ade,fde\n";
  for (const auto& row : rep.breakdown) out << row.seconds << "," << row.ade << "," << row.fde << "\n";
}

inline nlohmann::json report_to_json(const MetricReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : rep.breakdown)
    rows.push_back({{"horizon_s", row.seconds}, {"ade", row.ade}, {"fde", row.fde}});
  return {{"ade", rep.ade},
          {"fde", rep.fde},
          {"best_ade", rep.best_ade},
          {"best_fde", rep.best_fde},
          {"sample_count", rep.sample_count},
          {"violation_rate", rep.violation_rate},
          {"breakdown", rows}};
}

// ---------------------------------------------------------------------------
// Discrete Pearson-chi^2 oracle for the adversarial construction.
// ---------------------------------------------------------------------------

struct DiscreteDistribution {
  std::vector<double> p;

  explicit DiscreteDistribution(std::vector<double> probs) : p(std::move(probs)) {
    double total = 0.0;
    for (double v : p) {
      if (v < 0.0) throw std::invalid_argument("discrete distribution: negative probability");
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-12)
      throw std::invalid_argument("discrete distribution: probabilities sum to " + std::to_string(total));
  }

  std::size_t size() const { return p.size(); }
};

/// Pearson chi^2 divergence between p+q and 2q, summed over the finite
/// support: sum_y (2 q_y - (p_y + q_y))^2 / (p_y + q_y). Zero-mass bins on
/// both sides are skipped.
inline double pearson_chi2(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.size() != q.size()) throw std::invalid_argument("pearson_chi2: support size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double denom = p.p[i] + q.p[i];
    if (denom <= 0.0) continue;
    const double num = 2.0 * q.p[i] - denom;
    total += num * num / denom;
  }
  return total;
}

/// Per-bin score minimizing the least-squares discriminator objective
/// 0.5 p (s-1)^2 + 0.5 q (s+1)^2: s* = (p - q) / (p + q). Bins with no mass
/// get score 0.
inline std::vector<double> tabular_optimal_discriminator(const DiscreteDistribution& p,
                                                         const DiscreteDistribution& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("tabular_optimal_discriminator: support size mismatch");
  std::vector<double> scores(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double denom = p.p[i] + q.p[i];
    if (denom > 0.0) scores[i] = (p.p[i] - q.p[i]) / denom;
  }
  return scores;
}

/// The least-squares discriminator objective evaluated at a score vector.
inline double lsgan_discriminator_objective(const DiscreteDistribution& p, const DiscreteDistribution& q,
                                            const std::vector<double>& scores) {
  if (scores.size() != p.size()) throw std::invalid_argument("objective: score size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    total += 0.5 * p.p[i] * (scores[i] - 1.0) * (scores[i] - 1.0) +
             0.5 * q.p[i] * (scores[i] + 1.0) * (scores[i] + 1.0);
  return total;
}

/// 1-D golden-section minimization on [lo, hi].
inline double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                                      double tol = 1e-10) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2.0;
}

}  // namespace cgns
