#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/config.hpp"
#include "cgns/data.hpp"
#include "cgns/feasibility.hpp"
#include "cgns/metrics.hpp"
#include "cgns/model.hpp"

namespace cgns {

/// One window in both frames: world coordinates for metrics and the
/// anchor-centered normalized frame the model trains on.
struct PreparedWindow {
  TrajectoryWindow world;
  TrajectoryWindow norm;
  Normalizer normalizer;
};

/// Ground extent covered by one context raster, in meters.
constexpr double kRasterExtent = 20.0;

/// Slides windows over a scene, rasterizes context when the model uses it,
/// and normalizes each window into its anchor frame (rotation aligned with
/// the target's heading, scale 1).
inline std::vector<PreparedWindow> prepare_windows(const Scene& scene, const RunConfig& cfg,
                                                   int stride = 1) {
  auto windows = build_windows(scene, cfg.model.features.T_h, cfg.model.T_f, stride,
                               cfg.model.features.max_agents);
  std::vector<PreparedWindow> out;
  out.reserve(windows.size());
  for (auto& w : windows) {
    PreparedWindow pw;
    if (cfg.model.features.use_context)
      rasterize(scene, w, cfg.model.features.image_size, kRasterExtent, true);
    pw.world = w;
    pw.normalizer = make_normalizer(w, true);
    pw.norm = normalize(w, pw.normalizer);
    out.push_back(std::move(pw));
  }
  return out;
}

/// Model predictions for one prepared window, denormalized back into world
/// coordinates: [sample][slot][step].
inline std::vector<Prediction> predict_world(const CgnsModel& model, const PreparedWindow& pw, int K,
                                             Rng& rng) {
  auto samples = predict_window(model, pw.norm, K, rng);
  for (auto& sample : samples)
    for (int a = 0; a < pw.world.max_agents; ++a) {
      if (!pw.world.valid[a]) continue;
      for (auto& p : sample[a]) p = pw.normalizer.denormalize(p);
    }
  return samples;
}

struct EvalReport {
  MetricReport model;
  MetricReport cvm;
  MetricReport lr;
  std::size_t window_count = 0;
  int samples = 1;
};

namespace detail {

/// Horizon rows at every whole second up to the prediction horizon.
inline std::vector<double> horizon_seconds(int T_f, double step_seconds) {
  std::vector<double> out;
  for (int sec = 1; sec <= static_cast<int>(std::floor(T_f * step_seconds + 1e-9)); ++sec)
    out.push_back(sec);
  return out;
}

}  // namespace detail

/// Evaluates the model (mean-of-K and best-of-K) against the CVM and LR
/// baselines on the same windows, with per-second horizon breakdowns and the
/// sampled violation rate under `limits`.
inline EvalReport evaluate_model(const CgnsModel& model, const std::vector<PreparedWindow>& windows,
                                 int K, Rng& rng, const KinematicLimits& limits,
                                 double step_seconds) {
  if (windows.empty()) throw std::invalid_argument("evaluate_model: no windows");
  if (K < 1) throw std::invalid_argument("evaluate_model: need K >= 1");
  EvalReport rep;
  rep.window_count = windows.size();
  rep.samples = K;
  const int T_f = windows.front().world.T_f;
  const auto horizons = detail::horizon_seconds(T_f, step_seconds);

  rep.model.sample_count = K;
  for (const double sec : horizons) {
    HorizonRow r{sec, 0, 0};
    rep.model.breakdown.push_back(r);
    rep.cvm.breakdown.push_back(r);
    rep.lr.breakdown.push_back(r);
  }

  std::vector<std::vector<Vec2>> violation_samples;
  for (const auto& pw : windows) {
    auto samples = predict_world(model, pw, K, rng);
    auto mk = min_of_k(samples, pw.world);
    rep.model.ade += mk.ade;
    rep.model.fde += mk.fde;
    rep.model.best_ade += mk.best_ade;
    rep.model.best_fde += mk.best_fde;

    auto cvm = cvm_predict(pw.world);
    auto lr = lr_predict(pw.world);
    rep.cvm.ade += ade(cvm, pw.world);
    rep.cvm.fde += fde(cvm, pw.world);
    rep.lr.ade += ade(lr, pw.world);
    rep.lr.fde += fde(lr, pw.world);

    for (std::size_t h = 0; h < horizons.size(); ++h) {
      const int steps = std::min(T_f, static_cast<int>(std::lround(horizons[h] / step_seconds)));
      double m_ade = 0, m_fde = 0;
      for (const auto& s : samples) {
        m_ade += ade(s, pw.world, steps);
        m_fde += fde(s, pw.world, steps);
      }
      rep.model.breakdown[h].ade += m_ade / K;
      rep.model.breakdown[h].fde += m_fde / K;
      rep.cvm.breakdown[h].ade += ade(cvm, pw.world, steps);
      rep.cvm.breakdown[h].fde += fde(cvm, pw.world, steps);
      rep.lr.breakdown[h].ade += ade(lr, pw.world, steps);
      rep.lr.breakdown[h].fde += fde(lr, pw.world, steps);
    }

    // feasibility of sampled trajectories, observed tail prepended
    for (const auto& s : samples)
      for (int a = 0; a < pw.world.max_agents; ++a) {
        if (!pw.world.valid[a]) continue;
        std::vector<Vec2> traj;
        traj.push_back(pw.world.obs[a][pw.world.T_h - 2]);
        traj.push_back(pw.world.obs[a][pw.world.T_h - 1]);
        traj.insert(traj.end(), s[a].begin(), s[a].end());
        violation_samples.push_back(std::move(traj));
      }
  }

  const double inv = 1.0 / static_cast<double>(windows.size());
  for (MetricReport* r : {&rep.model, &rep.cvm, &rep.lr}) {
    r->ade *= inv;
    r->fde *= inv;
    r->best_ade *= inv;
    r->best_fde *= inv;
    for (auto& row : r->breakdown) {
      row.ade *= inv;
      row.fde *= inv;
    }
  }
  KinematicLimits eval_limits = limits;
  eval_limits.dt = windows.front().world.dt;
  rep.model.violation_rate = violation_rate(violation_samples, eval_limits);
  return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  return {{"model", report_to_json(rep.model)},
          {"cvm", report_to_json(rep.cvm)},
          {"lr", report_to_json(rep.lr)},
          {"windows", rep.window_count},
          {"samples", rep.samples}};
}

/// CSV of per-horizon rows for the model and both baselines.
inline void write_eval_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  out << "horizon_s,model_ade,model_fde,cvm_ade,cvm_fde,lr_ade,lr_fde\n";
  for (std::size_t h = 0; h < rep.model.breakdown.size(); ++h)
    out << rep.model.breakdown[h].seconds << "," << rep.model.breakdown[h].ade << ","
        << rep.model.breakdown[h].fde << "," << rep.cvm.breakdown[h].ade << ","
        << rep.cvm.breakdown[h].fde << "," << rep.lr.breakdown[h].ade << ","
        << rep.lr.breakdown[h].fde << "\n";
}

/// Prediction dump: one row per (window, sample, agent, step) position in
/// world coordinates.
inline void write_predictions_csv(const CgnsModel& model, const std::vector<PreparedWindow>& windows,
                                  int K, Rng& rng, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  out << "window_id,sample_id,agent,step,x,y\n";
  for (const auto& pw : windows) {
    auto samples = predict_world(model, pw, K, rng);
    for (int k = 0; k < K; ++k)
      for (int a = 0; a < pw.world.max_agents; ++a) {
        if (!pw.world.valid[a]) continue;
        for (int t = 0; t < pw.world.T_f; ++t)
          out << pw.world.window_id << "," << k << "," << a << "," << t << "," << samples[k][a][t][0]
              << "," << samples[k][a][t][1] << "\n";
      }
  }
}

}  // namespace cgns
