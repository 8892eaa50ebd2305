#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "cgns/model.hpp"

namespace cgns {

struct OptimizerConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("optimizer: learning rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
    if (eps <= 0) throw std::invalid_argument("optimizer: eps must be positive");
  }
};

struct TrainSchedule {
  int iterations = 200;
  int batch_size = 32;
  int checkpoint_every = 100;

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("schedule: negative iteration count");
    if (batch_size < 1) throw std::invalid_argument("schedule: batch size must be >= 1");
    if (checkpoint_every < 1) throw std::invalid_argument("schedule: checkpoint interval must be >= 1");
  }
};

/// Full run description. Mode defaults are applied before explicit JSON
/// overrides; pedestrian mode then forces the feasibility weight to zero
/// (the constraint has no meaning for human motion here).
struct RunConfig {
  std::string mode = "driving";
  std::uint64_t seed = 1;
  double step_seconds = 0.5;
  RunConfig() { apply_mode_defaults(); }

  ModelConfig model;
  LossWeights weights;
  OptimizerConfig optimizer;
  TrainSchedule schedule;

  // ablation switches (Table-style columns); off zeroes the matching weights
  bool enable_clsl = true;  // reconstruction + KL
  bool enable_vdm = true;   // adversarial terms

  int samples = 20;

  std::string trajectories_path;
  std::string map_path;

  void apply_mode_defaults() {
    if (mode == "driving") {
      model.features.T_h = 4;
      model.T_f = 10;
      step_seconds = 0.5;
    } else if (mode == "pedestrian") {
      model.features.T_h = 8;
      model.T_f = 12;
      step_seconds = 0.4;
    } else {
      throw std::invalid_argument("config: unknown mode '" + mode + "'");
    }
  }

  /// Weights with the ablation switches and mode rules folded in.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!enable_clsl) w.w_rc = w.w_kl = 0.0;
    if (!enable_vdm) w.w_adv = w.w_adv_enc = 0.0;
    if (mode == "pedestrian") w.w_feas = 0.0;
    w.limits.dt = step_seconds;
    return w;
  }

  void validate() const {
    if (mode != "driving" && mode != "pedestrian")
      throw std::invalid_argument("config: unknown mode '" + mode + "'");
    if (step_seconds <= 0) throw std::invalid_argument("config: step duration must be positive");
    if (samples < 1) throw std::invalid_argument("config: sample count must be >= 1");
    model.validate();
    effective_weights().validate();
    optimizer.validate();
    schedule.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON round trip.
// ---------------------------------------------------------------------------

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {
      {"mode", c.mode},
      {"seed", c.seed},
      {"step_seconds", c.step_seconds},
      {"model",
       {{"T_h", c.model.features.T_h},
        {"T_f", c.model.T_f},
        {"max_agents", c.model.features.max_agents},
        {"image_size", c.model.features.image_size},
        {"use_context", c.model.features.use_context},
        {"traj_gru_width", c.model.features.traj_gru_width},
        {"context_gru_width", c.model.features.context_gru_width},
        {"embed_width", c.model.features.embed_width},
        {"mask_components", c.model.features.mask_components},
        {"mask_fc_width", c.model.features.mask_fc_width},
        {"latent_dim", c.model.latent_dim},
        {"gen_gru_width", c.model.gen_gru_width},
        {"disc_gru_width", c.model.disc_gru_width},
        {"enc_widths", c.model.enc_widths},
        {"disc_fc_widths", c.model.disc_fc_widths}}},
      {"weights",
       {{"rc", c.weights.w_rc},
        {"kl", c.weights.w_kl},
        {"adv", c.weights.w_adv},
        {"adv_enc", c.weights.w_adv_enc},
        {"feas", c.weights.w_feas},
        {"alpha_acc", c.weights.alpha_acc},
        {"alpha_curv", c.weights.alpha_curv},
        {"a_max", c.weights.limits.a_max},
        {"kappa_max", c.weights.limits.kappa_max},
        {"d_steps", c.weights.d_steps}}},
      {"optimizer",
       {{"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}}},
      {"schedule",
       {{"iterations", c.schedule.iterations},
        {"batch_size", c.schedule.batch_size},
        {"checkpoint_every", c.schedule.checkpoint_every}}},
      {"ablation", {{"clsl", c.enable_clsl}, {"vdm", c.enable_vdm}}},
      {"samples", c.samples},
      {"data", {{"trajectories", c.trajectories_path}, {"map", c.map_path}}},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.mode = j.value("mode", c.mode);
  c.apply_mode_defaults();
  c.seed = j.value("seed", c.seed);
  c.step_seconds = j.value("step_seconds", c.step_seconds);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.features.T_h = m.value("T_h", c.model.features.T_h);
    c.model.T_f = m.value("T_f", c.model.T_f);
    c.model.features.max_agents = m.value("max_agents", c.model.features.max_agents);
    c.model.features.image_size = m.value("image_size", c.model.features.image_size);
    c.model.features.use_context = m.value("use_context", c.model.features.use_context);
    c.model.features.traj_gru_width = m.value("traj_gru_width", c.model.features.traj_gru_width);
    c.model.features.context_gru_width = m.value("context_gru_width", c.model.features.context_gru_width);
    c.model.features.embed_width = m.value("embed_width", c.model.features.embed_width);
    c.model.features.mask_components = m.value("mask_components", c.model.features.mask_components);
    c.model.features.mask_fc_width = m.value("mask_fc_width", c.model.features.mask_fc_width);
    c.model.latent_dim = m.value("latent_dim", c.model.latent_dim);
    c.model.gen_gru_width = m.value("gen_gru_width", c.model.gen_gru_width);
    c.model.disc_gru_width = m.value("disc_gru_width", c.model.disc_gru_width);
    c.model.enc_widths = m.value("enc_widths", c.model.enc_widths);
    c.model.disc_fc_widths = m.value("disc_fc_widths", c.model.disc_fc_widths);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.w_rc = w.value("rc", c.weights.w_rc);
    c.weights.w_kl = w.value("kl", c.weights.w_kl);
    c.weights.w_adv = w.value("adv", c.weights.w_adv);
    c.weights.w_adv_enc = w.value("adv_enc", c.weights.w_adv_enc);
    c.weights.w_feas = w.value("feas", c.weights.w_feas);
    c.weights.alpha_acc = w.value("alpha_acc", c.weights.alpha_acc);
    c.weights.alpha_curv = w.value("alpha_curv", c.weights.alpha_curv);
    c.weights.limits.a_max = w.value("a_max", c.weights.limits.a_max);
    c.weights.limits.kappa_max = w.value("kappa_max", c.weights.limits.kappa_max);
    c.weights.d_steps = w.value("d_steps", c.weights.d_steps);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    c.schedule.iterations = s.value("iterations", c.schedule.iterations);
    c.schedule.batch_size = s.value("batch_size", c.schedule.batch_size);
    c.schedule.checkpoint_every = s.value("checkpoint_every", c.schedule.checkpoint_every);
  }
  if (j.contains("ablation")) {
    c.enable_clsl = j.at("ablation").value("clsl", c.enable_clsl);
    c.enable_vdm = j.at("ablation").value("vdm", c.enable_vdm);
  }
  c.samples = j.value("samples", c.samples);
  if (j.contains("data")) {
    c.trajectories_path = j.at("data").value("trajectories", std::string());
    c.map_path = j.at("data").value("map", std::string());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  return run_config_from_json(j);
}

/// FNV-1a over the canonical serialization of everything that affects model
/// compatibility: mode, horizons, architecture, weights, optimizer. The seed
/// and data paths are deliberately excluded so a checkpoint can be evaluated
/// on other datasets and seeds.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json full = run_config_to_json(c);
  nlohmann::json relevant = {{"mode", full.at("mode")},
                             {"step_seconds", full.at("step_seconds")},
                             {"model", full.at("model")},
                             {"weights", full.at("weights")},
                             {"optimizer", full.at("optimizer")}};
  const std::string s = relevant.dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Writes the fully-defaulted config next to other run artifacts so a run
/// can be reproduced from its output directory alone.
inline void write_effective_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  nlohmann::json j = run_config_to_json(c);
  j["config_hash"] = config_hash(c);
  out << j.dump(2) << "\n";
}

}  // namespace cgns
