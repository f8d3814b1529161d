// gcvae: generate | train | infer | eval

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "gcvae/gcvae.hpp"

namespace fs = std::filesystem;
using gcvae::io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

gcvae::ExperimentConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed) {
  std::ifstream is(path);
  if (!is) throw gcvae::IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw gcvae::ConfigError(path.string() + ": " + e.what());
  }
  if (seed) j["seed"] = *seed;
  return gcvae::experiment_from_json(j);
}

void check_dims(const gcvae::ExperimentConfig& cfg, const gcvae::io::Manifest& m) {
  const auto& n = cfg.train.net;
  if (m.p != n.p || m.d != n.d || m.M != cfg.M)
    throw gcvae::ConfigError("dataset has p=" + std::to_string(m.p) + " d=" + std::to_string(m.d) +
                             " M=" + std::to_string(m.M) + " but config expects p=" + std::to_string(n.p) +
                             " d=" + std::to_string(n.d) + " M=" + std::to_string(cfg.M));
}

void check_params(const gcvae::ParamStore& params, const gcvae::NetConfig& net) {
  gcvae::Rng rng = gcvae::make_rng(0);
  const gcvae::ParamStore ref = gcvae::init_params(net, rng);
  if (ref.size() != params.size()) throw gcvae::ConfigError("checkpoint does not match the network config");
  for (const auto& [name, t] : ref) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape() != t.shape())
      throw gcvae::ConfigError("checkpoint does not match the network config at '" + name + "'");
  }
}

int cmd_generate(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  const gcvae::ExperimentConfig cfg = load_config(config, seed);
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    const fs::path dir = cfg.replicates == 1 ? out : out / ("rep_" + std::to_string(r));
    const gcvae::SimulatedData sim = gcvae::simulate(cfg, r);
    json gen = gcvae::to_json(cfg);
    gen["replicate"] = r;
    gcvae::io::write_dataset(dir, sim.trajectories, sim.truth, gen);
    std::ofstream log(dir / "generate.log", std::ios::trunc);
    log << "family " << gcvae::to_string(cfg.family) << "\nseed " << cfg.train.seed << "\nreplicate " << r << "\nM "
        << cfg.M << "\nT_long " << cfg.T_long << '\n';
  }
  std::cout << "wrote " << cfg.replicates << " dataset(s) to " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& config, const fs::path& data, const fs::path& out, std::optional<std::uint64_t> seed) {
  const gcvae::ExperimentConfig cfg = load_config(config, seed);
  const gcvae::io::Dataset ds = gcvae::io::load_dataset(data);
  check_dims(cfg, ds.manifest);
  fs::create_directories(out);
  gcvae::io::write_json(out / "resolved-config.json", gcvae::to_json(cfg));
  try {
    const gcvae::TrainResult res = gcvae::train(cfg.train, ds.trajectories, [](const gcvae::EpochLog& e, const auto&) {
      std::cerr << "epoch " << e.epoch << " total " << e.total << " val " << e.val_total << '\n';
    });
    gcvae::save_checkpoint((out / "model.bin").string(), res.params);
    gcvae::io::write_loss_csv(out / "loss.csv", res.log);
    std::cout << "trained " << res.log.size() << " epoch(s), best epoch " << res.best_epoch << '\n';
  } catch (const gcvae::TrainingDiverged& e) {
    gcvae::save_checkpoint((out / "model.bin").string(), e.last_good());
    throw;
  }
  return kExitOk;
}

int cmd_infer(const fs::path& checkpoint, const std::optional<fs::path>& config, const fs::path& data,
              const fs::path& out) {
  const fs::path cfg_path = config ? *config : checkpoint.parent_path() / "resolved-config.json";
  const gcvae::ExperimentConfig cfg = load_config(cfg_path, std::nullopt);
  const gcvae::ParamStore params = gcvae::load_checkpoint(checkpoint.string());
  check_params(params, cfg.train.net);
  const gcvae::io::Dataset ds = gcvae::io::load_dataset(data);
  check_dims(cfg, ds.manifest);
  const gcvae::InferenceResult inf = gcvae::infer_graphs(params, cfg.train, ds.trajectories);
  gcvae::io::write_estimates(out, inf);
  std::cout << "wrote " << inf.entities.size() + 1 << " estimate(s) to " << out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& est, const fs::path& truth, const fs::path& out) {
  const gcvae::io::GraphSet e = gcvae::io::read_estimates(est);
  const gcvae::io::GraphSet t = gcvae::io::read_truth(truth);
  const json report = gcvae::io::metrics_report(e, t);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  gcvae::io::write_json(out, report);
  fs::path sweep = out;
  sweep.replace_extension(".sweep.csv");
  gcvae::io::write_sweep_csv(sweep, report);
  const auto& c = report["common"];
  std::cout << "common auroc " << c["auroc"].dump() << ", entity macro auroc " << report["entity_macro"]["auroc"].dump()
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Granger-causal graph learning for groups of related time series"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, est, truth;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("generate", "simulate a dataset with ground-truth graphs");
  gen->add_option("--config", config, "experiment config (JSON)")->required();
  gen->add_option("--out", out, "dataset directory")->required();
  gen->add_option("--seed", seed, "overrides the config seed");

  auto* tr = app.add_subcommand("train", "fit the model to a dataset");
  tr->add_option("--config", config, "experiment config (JSON)")->required();
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_option("--seed", seed, "overrides the config seed");

  auto* inf = app.add_subcommand("infer", "extract graph estimates with a trained model");
  inf->add_option("--checkpoint", checkpoint, "model.bin")->required();
  inf->add_option("--data", data, "dataset directory")->required();
  inf->add_option("--out", out, "estimate directory")->required();
  inf->add_option("--config", config, "config (default: resolved-config.json next to the checkpoint)");

  auto* ev = app.add_subcommand("eval", "score estimates against truth");
  ev->add_option("--est", est, "estimate directory")->required();
  ev->add_option("--truth", truth, "dataset directory holding the truth graphs")->required();
  ev->add_option("--out", out, "metrics JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config, out, seed);
    if (*tr) return cmd_train(config, data, out, seed);
    if (*inf) return cmd_infer(checkpoint, config.empty() ? std::nullopt : std::optional<fs::path>(config), data, out);
    if (*ev) return cmd_eval(est, truth, out);
  } catch (const gcvae::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gcvae::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gcvae::TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const gcvae::SimulationError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const gcvae::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}
