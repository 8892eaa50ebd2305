// Command-line surface: synthesize data, train, predict, evaluate, verify.
//
// Exit codes: 0 success, 1 usage/IO/verification failure, 2 non-finite
// training loss, 3 checkpoint incompatible with the active config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cgns/checkpoint.hpp"
#include "cgns/config.hpp"
#include "cgns/data.hpp"
#include "cgns/pipeline.hpp"
#include "cgns/train.hpp"
#include "cgns/verify.hpp"

namespace {

namespace fs = std::filesystem;

// the only environment override: output directory
std::string resolve_out_dir(const std::string& flag_value) {
  if (const char* env = std::getenv("CGNS_OUT_DIR"); env && *env) return env;
  return flag_value;
}

cgns::Scene load_dataset(const cgns::RunConfig& cfg) {
  if (cfg.trajectories_path.empty())
    throw std::runtime_error("config: data.trajectories path is required for this command");
  cgns::Scene scene = cgns::load_trajectory_file(cfg.trajectories_path, cfg.step_seconds);
  if (!cfg.map_path.empty()) {
    std::ifstream in(cfg.map_path);
    if (!in) throw std::runtime_error("cannot open map " + cfg.map_path);
    nlohmann::json j;
    in >> j;
    scene.drivable = cgns::polygons_from_json(j);
  }
  return scene;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed_override,
              bool seed_given) {
  std::ifstream in(spec_path);
  if (!in) throw std::runtime_error("cannot open synth spec " + spec_path);
  nlohmann::json j;
  in >> j;
  cgns::SynthSpec spec = cgns::SynthSpec::from_json(j);
  if (seed_given) spec.seed = seed_override;
  fs::create_directories(out_dir);
  cgns::Scene scene = cgns::synth_generate(spec, spec.seed);
  cgns::save_trajectory_file(scene, out_dir + "/trajectories.txt");
  std::ofstream map(out_dir + "/map.json");
  map << cgns::polygons_to_json(scene.drivable).dump(2) << "\n";
  std::ofstream eff(out_dir + "/synth_spec.json");
  eff << spec.to_json().dump(2) << "\n";
  std::cout << "wrote " << scene.agents.size() << " agent tracks to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::uint64_t seed_override,
              bool seed_given) {
  cgns::RunConfig cfg = cgns::load_run_config(config_path);
  if (seed_given) cfg.seed = seed_override;
  fs::create_directories(out_dir);
  cgns::write_effective_config(cfg, out_dir + "/effective_config.json");

  cgns::Scene scene = load_dataset(cfg);
  auto windows = cgns::prepare_windows(scene, cfg);
  if (windows.empty()) throw std::runtime_error("dataset produced no training windows");
  std::vector<cgns::TrajectoryWindow> train_set;
  train_set.reserve(windows.size());
  for (const auto& pw : windows) train_set.push_back(pw.norm);

  cgns::Rng init_rng(cfg.seed);
  cgns::CgnsModel model(cfg.model, init_rng);
  const std::uint64_t hash = cgns::config_hash(cfg);
  const std::string ckpt_path = out_dir + "/checkpoint.bin";
  auto save = [&](int iteration) {
    cgns::save_checkpoint(ckpt_path, model.params, {hash, cfg.seed, iteration});
  };
  save(0);  // initialization checkpoint, also the zero-iteration artifact

  cgns::Rng train_rng(cfg.seed + 1);
  try {
    auto result = cgns::train_model(model, train_set, cfg, train_rng, save);
    save(cfg.schedule.iterations);
    cgns::write_metrics_csv(result.history, out_dir + "/metrics.csv");
    std::cout << "trained " << result.ge_updates << " generator updates, " << result.d_updates
              << " discriminator updates; checkpoint at " << ckpt_path << "\n";
  } catch (const cgns::NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

struct LoadedModel {
  cgns::RunConfig cfg;
  std::unique_ptr<cgns::CgnsModel> model;
  cgns::CheckpointMeta meta;
};

LoadedModel load_model(const std::string& config_path, const std::string& ckpt_path,
                       bool override_hash_check) {
  LoadedModel lm;
  lm.cfg = cgns::load_run_config(config_path);
  cgns::Rng rng(lm.cfg.seed);
  lm.model = std::make_unique<cgns::CgnsModel>(lm.cfg.model, rng);
  lm.meta = cgns::load_checkpoint(ckpt_path, lm.model->params, cgns::config_hash(lm.cfg),
                                  override_hash_check);
  return lm;
}

int cmd_predict(const std::string& config_path, const std::string& ckpt_path, const std::string& out_dir,
                int samples, std::uint64_t seed_override, bool seed_given, bool override_hash) {
  LoadedModel lm = load_model(config_path, ckpt_path, override_hash);
  if (samples > 0) lm.cfg.samples = samples;
  if (seed_given) lm.cfg.seed = seed_override;
  cgns::Scene scene = load_dataset(lm.cfg);
  auto windows = cgns::prepare_windows(scene, lm.cfg);
  if (windows.empty()) throw std::runtime_error("dataset produced no windows");
  fs::create_directories(out_dir);
  cgns::Rng rng(lm.cfg.seed);
  cgns::write_predictions_csv(*lm.model, windows, lm.cfg.samples, rng, out_dir + "/predictions.csv");
  std::cout << "wrote " << windows.size() << " windows x " << lm.cfg.samples << " samples to " << out_dir
            << "/predictions.csv\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, const std::string& out_dir,
             int samples, std::uint64_t seed_override, bool seed_given, bool override_hash) {
  LoadedModel lm = load_model(config_path, ckpt_path, override_hash);
  if (samples > 0) lm.cfg.samples = samples;
  if (seed_given) lm.cfg.seed = seed_override;
  cgns::Scene scene = load_dataset(lm.cfg);
  auto windows = cgns::prepare_windows(scene, lm.cfg);
  if (windows.empty()) throw std::runtime_error("dataset produced no windows");
  fs::create_directories(out_dir);
  cgns::Rng rng(lm.cfg.seed);
  cgns::EvalReport rep = cgns::evaluate_model(*lm.model, windows, lm.cfg.samples, rng,
                                              lm.cfg.effective_weights().limits, lm.cfg.step_seconds);
  nlohmann::json j = cgns::eval_report_to_json(rep);
  j["config_hash"] = cgns::config_hash(lm.cfg);
  j["checkpoint_iteration"] = lm.meta.iteration;
  j["seed"] = lm.cfg.seed;
  j["format_version"] = cgns::kCheckpointVersion;
  std::ofstream out(out_dir + "/report.json");
  out << j.dump(2) << "\n";
  cgns::write_eval_csv(rep, out_dir + "/report.csv");
  std::cout << "model ade " << rep.model.ade << " (best-of-" << rep.samples << " " << rep.model.best_ade
            << "), cvm ade " << rep.cvm.ade << ", lr ade " << rep.lr.ade << ", violation rate "
            << rep.model.violation_rate << "\n";
  return 0;
}

int cmd_verify(bool inject_kl_error) {
  auto checks = cgns::run_verification(inject_kl_error);
  bool all = true;
  for (const auto& c : checks) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " — " << c.detail << "\n";
    all = all && c.pass;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional generative trajectory prediction toolkit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_flag = "out";
  std::uint64_t seed = 0;
  int samples = 0;
  bool override_hash = false, inject_kl_error = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario dataset");
  synth->add_option("--config", config_path, "synth spec JSON")->required();
  synth->add_option("--out", out_flag, "output directory");
  auto* synth_seed = synth->add_option("--seed", seed, "seed override");

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_flag, "output directory");
  auto* train_seed = train->add_option("--seed", seed, "seed override");

  auto* predict = app.add_subcommand("predict", "sample predictions from a checkpoint");
  predict->add_option("--config", config_path, "run config JSON")->required();
  predict->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  predict->add_option("--out", out_flag, "output directory");
  predict->add_option("--samples", samples, "samples per window (K)");
  auto* predict_seed = predict->add_option("--seed", seed, "seed override");
  predict->add_flag("--override-hash-check", override_hash, "load despite a config hash mismatch");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the baselines");
  eval->add_option("--config", config_path, "run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  eval->add_option("--out", out_flag, "output directory");
  eval->add_option("--samples", samples, "samples per window (K)");
  auto* eval_seed = eval->add_option("--seed", seed, "seed override");
  eval->add_flag("--override-hash-check", override_hash, "load despite a config hash mismatch");

  auto* verify = app.add_subcommand("verify", "run the numerical verification suite");
  verify->add_flag("--inject-kl-error", inject_kl_error,
                   "mutation sentinel: corrupt the analytic KL so its check must fail");

  CLI11_PARSE(app, argc, argv);

  const std::string out_dir = resolve_out_dir(out_flag);
  try {
    if (synth->parsed()) return cmd_synth(config_path, out_dir, seed, !synth_seed->empty());
    if (train->parsed()) return cmd_train(config_path, out_dir, seed, !train_seed->empty());
    if (predict->parsed())
      return cmd_predict(config_path, checkpoint_path, out_dir, samples, seed, !predict_seed->empty(),
                         override_hash);
    if (eval->parsed())
      return cmd_eval(config_path, checkpoint_path, out_dir, samples, seed, !eval_seed->empty(),
                      override_hash);
    if (verify->parsed()) return cmd_verify(inject_kl_error);
  } catch (const cgns::CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
