#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/data.hpp"
#include "cgns/feasibility.hpp"
#include "cgns/features.hpp"
#include "cgns/layers.hpp"
#include "cgns/rng.hpp"
#include "cgns/tensor.hpp"

namespace cgns {

/// Objective weights and the feasibility bounds they gate. Pedestrian-mode
/// configs force w_feas to 0 upstream.
struct LossWeights {
  double w_rc = 5.0;        // reconstruction
  double w_kl = 1.0;        // latent divergence from the unit prior
  double w_adv = 1.0;       // adversarial terms with prior-sampled latents
  double w_adv_enc = 1.0;   // adversarial terms with encoder-sampled latents
  double w_feas = 1.0;      // feasibility penalty
  double alpha_acc = 1000.0;
  double alpha_curv = 1000.0;
  KinematicLimits limits;
  int d_steps = 2;

  void validate() const {
    if (w_rc < 0 || w_kl < 0 || w_adv < 0 || w_adv_enc < 0 || w_feas < 0)
      throw std::invalid_argument("loss weights: negative weight");
    if (alpha_acc < 0 || alpha_curv < 0) throw std::invalid_argument("loss weights: negative alpha");
    if (d_steps < 1) throw std::invalid_argument("loss weights: d_steps must be >= 1");
    limits.validate();
  }
};

struct ModelConfig {
  FeatureConfig features;
  int T_f = 10;
  int latent_dim = 2;
  int gen_gru_width = 128;
  int disc_gru_width = 128;
  std::vector<int> enc_widths = {256, 128, 64};
  std::vector<int> disc_fc_widths = {128, 128};

  void validate() const {
    features.validate();
    if (T_f < 1) throw std::invalid_argument("model config: T_f must be >= 1");
    if (latent_dim < 1) throw std::invalid_argument("model config: latent dim must be >= 1");
    if (enc_widths.empty() || disc_fc_widths.empty())
      throw std::invalid_argument("model config: empty layer stack");
  }
};

/// Mean and log-variance of the approximate posterior over the latent.
struct LatentGaussian {
  Tensor mean;     // (1, latent_dim)
  Tensor log_var;  // (1, latent_dim)
};

/// Encoder, generator, and discriminator over one shared parameter registry.
/// Parameter prefixes: fx/ (feature extractor, trained with the generator
/// side), enc/, gen/, disc/ — freezing by prefix is how the alternating
/// updates keep each side's gradients separate.
struct CgnsModel {
  ModelConfig cfg;
  ParamRegistry params;
  FeatureExtractor fx;

  DenseStack enc_stack;
  Dense enc_mean;
  Dense enc_log_var;

  Dense gen_init;
  GruCell gen_gru;
  Dense gen_head;

  GruCell disc_gru;
  DenseStack disc_fc;

  CgnsModel(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    fx = FeatureExtractor(params, "fx/", cfg.features, rng);
    const int cols = 2 * cfg.features.max_agents;
    const int embed = cfg.features.embed_width;

    enc_stack = DenseStack(params, "enc/fc", embed + cfg.T_f * cols, cfg.enc_widths, rng,
                           Activation::Relu, Activation::Relu);
    enc_mean = Dense(params, "enc/mean", cfg.enc_widths.back(), cfg.latent_dim, Activation::None, rng);
    enc_log_var = Dense(params, "enc/log_var", cfg.enc_widths.back(), cfg.latent_dim, Activation::None, rng);

    gen_init = Dense(params, "gen/init", embed + cfg.latent_dim, cfg.gen_gru_width, Activation::Tanh, rng);
    gen_gru = GruCell(params, "gen/gru", cols, cfg.gen_gru_width, rng);
    gen_head = Dense(params, "gen/head", cfg.gen_gru_width, cols, Activation::None, rng);

    disc_gru = GruCell(params, "disc/gru", embed + cols, cfg.disc_gru_width, rng);
    std::vector<int> fc = cfg.disc_fc_widths;
    fc.push_back(1);
    disc_fc = DenseStack(params, "disc/fc", cfg.disc_gru_width, fc, rng);
  }

  /// Posterior over the latent from the condition embedding and the flattened
  /// ground-truth future.
  LatentGaussian encode(const Tensor& cond, const Tensor& future) const {
    const int cols = 2 * cfg.features.max_agents;
    if (future.shape() != Shape{cfg.T_f, cols})
      throw std::invalid_argument("encode: future shape " + shape_str(future.shape()) + ", expected (" +
                                  std::to_string(cfg.T_f) + ", " + std::to_string(cols) + ")");
    Tensor h = enc_stack.forward(concat({cond, reshape(future, {1, cfg.T_f * cols})}, 1));
    return {enc_mean.forward(h), enc_log_var.forward(h)};
  }

  /// z = mean + exp(log_var / 2) * noise; gradient flows into both heads.
  Tensor reparameterize(const LatentGaussian& latent, const std::vector<double>& noise) const {
    if (static_cast<int>(noise.size()) != cfg.latent_dim)
      throw std::invalid_argument("reparameterize: noise dimension mismatch");
    Tensor eps = Tensor::from({1, cfg.latent_dim}, std::vector<double>(noise));
    return add(latent.mean, mul(exp_t(mul_scalar(latent.log_var, 0.5)), eps));
  }

  /// Decodes T_f steps of per-agent displacements, accumulated from the last
  /// observed positions. With all-zero parameters this is a constant-position
  /// predictor. Returns a (T_f, 2N) tensor.
  Tensor generate(const Tensor& cond, const Tensor& z, const Tensor& last_observed) const {
    const int cols = 2 * cfg.features.max_agents;
    if (last_observed.shape() != Shape{1, cols})
      throw std::invalid_argument("generate: last observed row shape " + shape_str(last_observed.shape()));
    Tensor h = gen_init.forward(concat({cond, z}, 1));
    Tensor pos = last_observed;
    std::vector<Tensor> rows;
    rows.reserve(cfg.T_f);
    for (int t = 0; t < cfg.T_f; ++t) {
      h = gen_gru.step(pos, h);
      pos = add(pos, gen_head.forward(h));
      rows.push_back(pos);
    }
    return concat(rows, 0);
  }

  /// Unbounded least-squares score for a (T_f, 2N) trajectory judged in the
  /// context of the condition embedding.
  Tensor discriminate(const Tensor& cond, const Tensor& traj) const {
    const int cols = 2 * cfg.features.max_agents;
    if (traj.shape() != Shape{cfg.T_f, cols})
      throw std::invalid_argument("discriminate: trajectory shape " + shape_str(traj.shape()) +
                                  ", expected (" + std::to_string(cfg.T_f) + ", " + std::to_string(cols) + ")");
    Tensor h = Tensor::zeros({1, cfg.disc_gru_width});
    for (int t = 0; t < cfg.T_f; ++t)
      h = disc_gru.step(concat({cond, reshape(slice(traj, 0, t, 1), {1, cols})}, 1), h);
    return disc_fc.forward(h);  // (1, 1)
  }
};

// ---------------------------------------------------------------------------
// Loss terms.
// ---------------------------------------------------------------------------

/// Squared Euclidean reconstruction error summed over valid agents, steps,
/// and coordinates. `column_mask` is the (1, 2N) validity row.
inline Tensor loss_rc(const Tensor& pred, const Tensor& truth, const Tensor& column_mask) {
  if (pred.shape() != truth.shape())
    throw std::invalid_argument("loss_rc: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(truth.shape()));
  Tensor diff = sub(truth, pred);
  // broadcast the validity row over all steps
  std::vector<Tensor> rows(pred.shape()[0], column_mask);
  Tensor mask = concat(rows, 0);
  return sum(mul(mask, square(diff)));
}

/// Analytic KL divergence from N(mean, diag exp(log_var)) to N(0, I).
inline Tensor loss_kl(const LatentGaussian& latent) {
  Tensor mu2 = square(latent.mean);
  Tensor var = exp_t(latent.log_var);
  Tensor term = sub(sub(add(mu2, var), Tensor::from(latent.mean.shape(), std::vector<double>(latent.mean.numel(), 1.0))),
                    latent.log_var);
  return mul_scalar(sum(term), 0.5);
}

/// Least-squares generator loss: 0.5 * mean of squared fake scores.
inline Tensor loss_g_vdm(const std::vector<Tensor>& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("loss_g_vdm: empty batch");
  Tensor total = square(fake_scores[0]);
  for (std::size_t i = 1; i < fake_scores.size(); ++i) total = add(total, square(fake_scores[i]));
  return mul_scalar(sum(total), 0.5 / fake_scores.size());
}

/// Least-squares discriminator loss with targets +1 (real) and -1 (fake).
inline Tensor loss_d_vdm(const std::vector<Tensor>& real_scores, const std::vector<Tensor>& fake_scores) {
  if (real_scores.empty() || real_scores.size() != fake_scores.size())
    throw std::invalid_argument("loss_d_vdm: batch size mismatch");
  Tensor total;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    Tensor r = square(add_scalar(real_scores[i], -1.0));
    Tensor f = square(add_scalar(fake_scores[i], 1.0));
    Tensor pair = add(r, f);
    total = (i == 0) ? pair : add(total, pair);
  }
  return mul_scalar(sum(total), 0.5 / real_scores.size());
}

// ---------------------------------------------------------------------------
// Batch objective.
// ---------------------------------------------------------------------------

enum class LossSide { GeneratorSide, DiscriminatorSide };

/// Scalar values of every objective term for one batch, plus the weighted
/// totals. Terms gated off by a zero weight are reported as exact zeros.
struct BatchTerms {
  double rc = 0.0;
  double kl = 0.0;
  double g_vdm = 0.0;       // prior-sampled generator loss
  double d_vdm = 0.0;       // prior-sampled discriminator loss
  double ge_vdm = 0.0;      // encoder-sampled generator loss
  double de_vdm = 0.0;      // encoder-sampled discriminator loss
  double feas = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;
};

namespace detail {

inline Tensor future_matrix(const TrajectoryWindow& w) {
  std::vector<double> vals(static_cast<std::size_t>(w.T_f) * 2 * w.max_agents, 0.0);
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    for (int t = 0; t < w.T_f; ++t) {
      vals[static_cast<std::size_t>(t) * 2 * w.max_agents + 2 * a] = w.fut[a][t][0];
      vals[static_cast<std::size_t>(t) * 2 * w.max_agents + 2 * a + 1] = w.fut[a][t][1];
    }
  }
  return Tensor::from({w.T_f, 2 * w.max_agents}, std::move(vals));
}

inline Tensor validity_row(const TrajectoryWindow& w) {
  std::vector<double> vals(2 * static_cast<std::size_t>(w.max_agents), 0.0);
  for (int a = 0; a < w.max_agents; ++a)
    if (w.valid[a]) vals[2 * a] = vals[2 * a + 1] = 1.0;
  return Tensor::from({1, 2 * w.max_agents}, std::move(vals));
}

inline Tensor last_observed_row(const TrajectoryWindow& w) {
  std::vector<double> vals(2 * static_cast<std::size_t>(w.max_agents), 0.0);
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    vals[2 * a] = w.obs[a][w.T_h - 1][0];
    vals[2 * a + 1] = w.obs[a][w.T_h - 1][1];
  }
  return Tensor::from({1, 2 * w.max_agents}, std::move(vals));
}

/// Hinge feasibility over every valid agent of one predicted (T_f, 2N)
/// tensor, each trajectory prefixed by its last two observed positions so
/// the first predicted step has defined kinematics.
inline Tensor window_feasibility(const CgnsModel& model, const TrajectoryWindow& w, const Tensor& pred,
                                 const LossWeights& weights) {
  Tensor total = Tensor::scalar(0.0);
  int count = 0;
  KinematicLimits limits = weights.limits;
  limits.dt = w.dt;
  for (int a = 0; a < w.max_agents; ++a) {
    if (!w.valid[a]) continue;
    Tensor prefix = Tensor::from(
        {2, 2}, {w.obs[a][w.T_h - 2][0], w.obs[a][w.T_h - 2][1], w.obs[a][w.T_h - 1][0], w.obs[a][w.T_h - 1][1]});
    Tensor traj = concat({prefix, slice(pred, 1, 2 * a, 2)}, 0);
    total = add(total, feasibility_hinge(traj, limits, weights.alpha_acc, weights.alpha_curv));
    ++count;
  }
  (void)model;
  return count ? mul_scalar(total, 1.0 / count) : total;
}

}  // namespace detail

/// Builds the full computation graph for one batch and returns the weighted
/// objective of the requested side, recording every term's scalar value.
/// Gradient separation between the sides is the caller's job (freeze by
/// parameter prefix before backward).
inline Tensor batch_objective(const CgnsModel& model, const std::vector<TrajectoryWindow>& batch,
                              const LossWeights& weights, LossSide side, Rng& rng, BatchTerms& terms) {
  if (batch.empty()) throw std::invalid_argument("batch_objective: empty batch");
  weights.validate();
  terms = BatchTerms{};
  const bool gen_side = side == LossSide::GeneratorSide;
  const int latent = model.cfg.latent_dim;

  Tensor rc_total, kl_total, feas_total;
  std::vector<Tensor> real_scores, fake_prior, fake_enc;

  const bool need_enc = gen_side ? (weights.w_rc > 0 || weights.w_kl > 0 || weights.w_adv_enc > 0)
                                 : (weights.w_adv_enc > 0);
  const bool need_prior = weights.w_adv > 0;
  const bool need_scores = weights.w_adv > 0 || weights.w_adv_enc > 0;

  for (const auto& w : batch) {
    Tensor traj = window_trajectory_matrix(w);
    auto frames = window_frames(w);
    ConditionEmbedding cond = model.fx.extract(traj, frames);
    Tensor future = detail::future_matrix(w);
    Tensor valid_row = detail::validity_row(w);
    Tensor last_row = detail::last_observed_row(w);

    Tensor pred_enc;
    if (need_enc) {
      LatentGaussian post = model.encode(cond.embedding, future);
      std::vector<double> noise(latent);
      for (auto& n : noise) n = rng.normal();
      Tensor z = model.reparameterize(post, noise);
      pred_enc = model.generate(cond.embedding, z, last_row);
      if (gen_side && weights.w_rc > 0) {
        Tensor rc = loss_rc(pred_enc, future, valid_row);
        rc_total = rc_total.defined() ? add(rc_total, rc) : rc;
      }
      if (gen_side && weights.w_kl > 0) {
        Tensor kl = loss_kl(post);
        kl_total = kl_total.defined() ? add(kl_total, kl) : kl;
      }
    }

    Tensor pred_prior;
    if (need_prior) {
      std::vector<double> zvals(latent);
      for (auto& z : zvals) z = rng.normal();
      Tensor z = Tensor::from({1, latent}, std::move(zvals));
      pred_prior = model.generate(cond.embedding, z, last_row);
    }

    if (need_scores) {
      real_scores.push_back(model.discriminate(cond.embedding, future));
      if (need_prior) fake_prior.push_back(model.discriminate(cond.embedding, pred_prior));
      if (weights.w_adv_enc > 0 && pred_enc.defined())
        fake_enc.push_back(model.discriminate(cond.embedding, pred_enc));
    }

    if (gen_side && weights.w_feas > 0) {
      // penalize every generated trajectory in the graph: the posterior
      // reconstruction and, when present, the prior sample — the latter is
      // what gets drawn at prediction time
      Tensor f;
      int n = 0;
      if (pred_enc.defined()) {
        f = detail::window_feasibility(model, w, pred_enc, weights);
        ++n;
      }
      if (pred_prior.defined()) {
        Tensor fp = detail::window_feasibility(model, w, pred_prior, weights);
        f = f.defined() ? add(f, fp) : fp;
        ++n;
      }
      if (n > 0) {
        f = mul_scalar(f, 1.0 / n);
        feas_total = feas_total.defined() ? add(feas_total, f) : f;
      }
    }
  }

  const double inv_b = 1.0 / batch.size();
  Tensor total = Tensor::scalar(0.0);
  if (gen_side) {
    if (rc_total.defined()) {
      Tensor rc = mul_scalar(rc_total, inv_b);
      terms.rc = rc[0];
      total = add(total, mul_scalar(rc, weights.w_rc));
    }
    if (kl_total.defined()) {
      Tensor kl = mul_scalar(kl_total, inv_b);
      terms.kl = kl[0];
      total = add(total, mul_scalar(kl, weights.w_kl));
    }
    if (weights.w_adv > 0 && !fake_prior.empty()) {
      Tensor g = loss_g_vdm(fake_prior);
      terms.g_vdm = g[0];
      total = add(total, mul_scalar(g, weights.w_adv));
    }
    if (weights.w_adv_enc > 0 && !fake_enc.empty()) {
      Tensor ge = loss_g_vdm(fake_enc);
      terms.ge_vdm = ge[0];
      total = add(total, mul_scalar(ge, weights.w_adv_enc));
    }
    if (feas_total.defined()) {
      Tensor f = mul_scalar(feas_total, inv_b);
      terms.feas = f[0];
      total = add(total, mul_scalar(f, weights.w_feas));
    }
    terms.total_g = total[0];
  } else {
    if (weights.w_adv > 0 && !fake_prior.empty()) {
      Tensor d = loss_d_vdm(real_scores, fake_prior);
      terms.d_vdm = d[0];
      total = add(total, mul_scalar(d, weights.w_adv));
    }
    if (weights.w_adv_enc > 0 && !fake_enc.empty()) {
      Tensor de = loss_d_vdm(real_scores, fake_enc);
      terms.de_vdm = de[0];
      total = add(total, mul_scalar(de, weights.w_adv_enc));
    }
    terms.total_d = total[0];
  }
  return total;
}

/// K prior-sampled predictions for one window, as [sample][slot][step]
/// positions. Invalid slots keep zeros. Runs without a tape.
inline std::vector<std::vector<std::vector<Vec2>>> predict_window(const CgnsModel& model,
                                                                  const TrajectoryWindow& w, int K,
                                                                  Rng& rng) {
  if (K < 1) throw std::invalid_argument("predict_window: need K >= 1 samples");
  Tensor traj = window_trajectory_matrix(w);
  auto frames = window_frames(w);
  ConditionEmbedding cond = model.fx.extract(traj, frames);
  Tensor last_row = detail::last_observed_row(w);
  std::vector<std::vector<std::vector<Vec2>>> out;
  out.reserve(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> zvals(model.cfg.latent_dim);
    for (auto& z : zvals) z = rng.normal();
    Tensor pred = model.generate(cond.embedding, Tensor::from({1, model.cfg.latent_dim}, std::move(zvals)),
                                 last_row);
    std::vector<std::vector<Vec2>> sample(w.max_agents, std::vector<Vec2>(w.T_f, {0, 0}));
    for (int a = 0; a < w.max_agents; ++a) {
      if (!w.valid[a]) continue;
      for (int t = 0; t < w.T_f; ++t) sample[a][t] = {pred.at(t, 2 * a), pred.at(t, 2 * a + 1)};
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace cgns
