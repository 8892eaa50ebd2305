#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/config.hpp"
#include "cgns/model.hpp"
#include "cgns/optimizer.hpp"

namespace cgns {

/// Raised when any objective evaluates to a non-finite value; carries the
/// iteration and the full term breakdown for diagnosis.
struct NonFiniteLoss : std::runtime_error {
  int iteration;
  BatchTerms terms;
  NonFiniteLoss(int iter, const BatchTerms& t, const std::string& side)
      : std::runtime_error("non-finite " + side + " loss at iteration " + std::to_string(iter) +
                           " (rc=" + std::to_string(t.rc) + " kl=" + std::to_string(t.kl) +
                           " g_vdm=" + std::to_string(t.g_vdm) + " d_vdm=" + std::to_string(t.d_vdm) +
                           " ge_vdm=" + std::to_string(t.ge_vdm) + " de_vdm=" + std::to_string(t.de_vdm) +
                           " feas=" + std::to_string(t.feas) + ")"),
        iteration(iter),
        terms(t) {}
};

/// One metrics-log row: the term values seen during an iteration's updates.
/// Discriminator terms come from that iteration's last discriminator update.
struct TrainRow {
  int iteration = 0;
  BatchTerms terms;
};

struct TrainResult {
  std::vector<TrainRow> history;
  long d_updates = 0;
  long ge_updates = 0;
};

inline void write_metrics_csv(const std::vector<TrainRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.precision(17);
  out << "iteration,loss_rc,loss_kl,loss_g_vdm,loss_d_vdm,loss_ge_vdm,loss_de_vdm,loss_f,total_g,total_d\n";
  for (const auto& r : rows)
    out << r.iteration << "," << r.terms.rc << "," << r.terms.kl << "," << r.terms.g_vdm << ","
        << r.terms.d_vdm << "," << r.terms.ge_vdm << "," << r.terms.de_vdm << "," << r.terms.feas << ","
        << r.terms.total_g << "," << r.terms.total_d << "\n";
}

/// Alternating training: per iteration, `d_steps` discriminator updates on
/// fresh forward passes with the generator-side parameters frozen, then one
/// generator/encoder/extractor update with the discriminator frozen. Batches
/// are drawn with replacement from the training windows; all randomness goes
/// through `rng`, so a fixed seed reproduces the loss curve bitwise.
inline TrainResult train_model(CgnsModel& model, const std::vector<TrajectoryWindow>& windows,
                               const RunConfig& cfg, Rng& rng,
                               const std::function<void(int)>& on_checkpoint = {}) {
  if (windows.empty()) throw std::invalid_argument("train: empty dataset");
  cfg.validate();
  const LossWeights weights = cfg.effective_weights();
  Adam opt_d(cfg.optimizer);
  Adam opt_g(cfg.optimizer);
  TrainResult result;
  result.history.reserve(cfg.schedule.iterations);

  auto sample_batch = [&] {
    std::vector<TrajectoryWindow> batch;
    batch.reserve(cfg.schedule.batch_size);
    for (int b = 0; b < cfg.schedule.batch_size; ++b)
      batch.push_back(windows[rng.integer(windows.size())]);
    return batch;
  };

  const bool disc_active = weights.w_adv > 0 || weights.w_adv_enc > 0;

  for (int iter = 1; iter <= cfg.schedule.iterations; ++iter) {
    TrainRow row;
    row.iteration = iter;

    if (disc_active) {
      for (int d = 0; d < weights.d_steps; ++d) {
        auto batch = sample_batch();
        model.params.zero_grad();
        model.params.set_trainable("fx/", false);
        model.params.set_trainable("enc/", false);
        model.params.set_trainable("gen/", false);
        BatchTerms terms;
        {
          Tape tape;
          Tensor loss = batch_objective(model, batch, weights, LossSide::DiscriminatorSide, rng, terms);
          if (!std::isfinite(loss[0])) {
            model.params.set_trainable("fx/", true);
            model.params.set_trainable("enc/", true);
            model.params.set_trainable("gen/", true);
            throw NonFiniteLoss(iter, terms, "discriminator");
          }
          backward(loss);
        }
        model.params.set_trainable("fx/", true);
        model.params.set_trainable("enc/", true);
        model.params.set_trainable("gen/", true);
        opt_d.step(model.params, {"disc/"});
        ++result.d_updates;
        row.terms.d_vdm = terms.d_vdm;
        row.terms.de_vdm = terms.de_vdm;
        row.terms.total_d = terms.total_d;
      }
    }

    {
      auto batch = sample_batch();
      model.params.zero_grad();
      model.params.set_trainable("disc/", false);
      BatchTerms terms;
      {
        Tape tape;
        Tensor loss = batch_objective(model, batch, weights, LossSide::GeneratorSide, rng, terms);
        if (!std::isfinite(loss[0])) {
          model.params.set_trainable("disc/", true);
          throw NonFiniteLoss(iter, terms, "generator");
        }
        backward(loss);
      }
      model.params.set_trainable("disc/", true);
      opt_g.step(model.params, {"fx/", "enc/", "gen/"});
      ++result.ge_updates;
      row.terms.rc = terms.rc;
      row.terms.kl = terms.kl;
      row.terms.g_vdm = terms.g_vdm;
      row.terms.ge_vdm = terms.ge_vdm;
      row.terms.feas = terms.feas;
      row.terms.total_g = terms.total_g;
    }

    result.history.push_back(row);
    if (on_checkpoint && iter % cfg.schedule.checkpoint_every == 0) on_checkpoint(iter);
  }
  return result;
}

}  // namespace cgns
