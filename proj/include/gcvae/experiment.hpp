#pragma once

// Declarative experiment configs (strict JSON) and dataset synthesis from them.

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcvae/errors.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/synth.hpp"
#include "gcvae/trainer.hpp"

namespace gcvae {

enum class Family { linear_var, nonlinear_var, lotka_volterra, lorenz96, springs };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::linear_var: return "linear_var";
    case Family::nonlinear_var: return "nonlinear_var";
    case Family::lotka_volterra: return "lotka_volterra";
    case Family::lorenz96: return "lorenz96";
    case Family::springs: return "springs";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (Family f : {Family::linear_var, Family::nonlinear_var, Family::lotka_volterra, Family::lorenz96, Family::springs})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown family '" + s + "'");
}

inline const char* to_string(FixRule r) {
  switch (r) {
    case FixRule::everything: return "everything";
    case FixRule::every_other: return "every_other";
    case FixRule::every_third: return "every_third";
    case FixRule::diagonals_corners: return "diagonals_corners";
    case FixRule::first_last: return "first_last";
  }
  return "?";
}

/// Family-specific generator knobs; only the ones of the chosen family are read or written.
struct GeneratorConfig {
  // linear_var
  double density = 0.1;
  double relocate_fraction = 0.1;
  double spectral_radius = 0.5;
  // nonlinear_var
  FixRule fix_rule = FixRule::every_other;
  // lotka_volterra
  std::size_t extra_edges = 2;
  LVParams lv;
  // lorenz96
  Lorenz96Params l96;
  // springs
  SpringsParams springs;
  // VARs, lotka_volterra, lorenz96
  std::size_t burn_in = 200;
};

struct ExperimentConfig {
  Family family = Family::linear_var;
  std::size_t M = 5;
  std::size_t T_long = 20010;
  std::size_t replicates = 1;
  TrainConfig train;  // carries p, d, T, stride, q, network and optimizer settings
  GeneratorConfig gen;

  void validate() const {
    train.validate();
    if (M < 1) throw ConfigError("M must be at least 1");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (T_long < train.net.T) throw ConfigError("T_long must be at least T");
    const bool springs = family == Family::springs;
    if (springs != (train.net.mode == Mode::binary))
      throw ConfigError(springs ? "springs requires binary mode" : "binary mode is only available for springs");
    const std::size_t want_d = springs ? 4 : 1;
    if (train.net.d != want_d)
      throw ConfigError(std::string(to_string(family)) + " produces d = " + std::to_string(want_d));
  }
};

namespace detail {

using json = nlohmann::json;

// Rejects missing and unknown keys so a config file is a complete record.
inline void require_keys(const json& j, const std::string& where, const std::set<std::string>& keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& k : keys)
    if (!j.contains(k)) throw ConfigError(where + ": missing key '" + k + "'");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline const std::set<std::string>& generator_keys(Family f) {
  static const std::set<std::string> lin{"density", "relocate_fraction", "spectral_radius", "burn_in"};
  static const std::set<std::string> nl{"fix_rule", "burn_in"};
  static const std::set<std::string> lv{"extra_edges", "alpha", "beta", "gamma", "delta", "eta",
                                        "dt", "steps_per_sample", "obs_noise_sd", "burn_in"};
  static const std::set<std::string> l96{"dt", "steps_per_sample", "init_sd", "burn_in"};
  static const std::set<std::string> spr{"k", "dt", "steps_per_sample", "box", "vel_norm"};
  switch (f) {
    case Family::linear_var: return lin;
    case Family::nonlinear_var: return nl;
    case Family::lotka_volterra: return lv;
    case Family::lorenz96: return l96;
    case Family::springs: return spr;
  }
  return lin;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using json = nlohmann::json;
  const NetConfig& n = c.train.net;
  const GeneratorConfig& g = c.gen;
  json gen;
  switch (c.family) {
    case Family::linear_var:
      gen = {{"density", g.density}, {"relocate_fraction", g.relocate_fraction},
             {"spectral_radius", g.spectral_radius}, {"burn_in", g.burn_in}};
      break;
    case Family::nonlinear_var: gen = {{"fix_rule", to_string(g.fix_rule)}, {"burn_in", g.burn_in}}; break;
    case Family::lotka_volterra:
      gen = {{"extra_edges", g.extra_edges}, {"alpha", g.lv.alpha}, {"beta", g.lv.beta_rate},
             {"gamma", g.lv.gamma}, {"delta", g.lv.delta_rate}, {"eta", g.lv.eta},
             {"dt", g.lv.dt}, {"steps_per_sample", g.lv.steps_per_sample}, {"obs_noise_sd", g.lv.obs_noise_sd},
             {"burn_in", g.burn_in}};
      break;
    case Family::lorenz96:
      gen = {{"dt", g.l96.dt}, {"steps_per_sample", g.l96.steps_per_sample}, {"init_sd", g.l96.init_sd},
             {"burn_in", g.burn_in}};
      break;
    case Family::springs:
      gen = {{"k", g.springs.k}, {"dt", g.springs.dt}, {"steps_per_sample", g.springs.steps_per_sample},
             {"box", g.springs.box}, {"vel_norm", g.springs.vel_norm}};
      break;
  }
  return {{"family", to_string(c.family)},
          {"p", n.p},
          {"d", n.d},
          {"M", c.M},
          {"T_long", c.T_long},
          {"T", n.T},
          {"stride", c.train.stride},
          {"q", n.q},
          {"mode", to_string(n.mode)},
          {"omega", c.train.omega},
          {"tau", c.train.tau},
          {"n_hid", n.n_hid},
          {"decoder_style", to_string(n.decoder_style)},
          {"decoder_sharing", to_string(n.decoder_sharing)},
          {"aggregation", to_string(n.aggregation)},
          {"embed_dim", n.embed_dim},
          {"dropout", n.dropout},
          {"optimizer",
           {{"lr", c.train.adam.lr}, {"beta1", c.train.adam.beta1}, {"beta2", c.train.adam.beta2},
            {"eps", c.train.adam.eps}, {"grad_clip", c.train.grad_clip}}},
          {"training",
           {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"patience", c.train.patience},
            {"val_fraction", c.train.val_fraction}, {"standardize", c.train.standardize}}},
          {"seed", c.train.seed},
          {"replicates", c.replicates},
          {"generator", gen}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using detail::require_keys;
  try {
    require_keys(j, "config",
                 {"family", "p", "d", "M", "T_long", "T", "stride", "q", "mode", "omega", "tau", "n_hid",
                  "decoder_style", "decoder_sharing", "aggregation", "embed_dim", "dropout", "optimizer", "training",
                  "seed", "replicates", "generator"});
    ExperimentConfig c;
    c.family = parse_family(j.at("family").get<std::string>());
    NetConfig& n = c.train.net;
    n.p = j.at("p").get<std::size_t>();
    n.d = j.at("d").get<std::size_t>();
    c.M = j.at("M").get<std::size_t>();
    c.T_long = j.at("T_long").get<std::size_t>();
    n.T = j.at("T").get<std::size_t>();
    c.train.stride = j.at("stride").get<std::size_t>();
    n.q = j.at("q").get<std::size_t>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode != "continuous" && mode != "binary") throw ConfigError("mode must be continuous or binary");
    n.mode = mode == "binary" ? Mode::binary : Mode::continuous;
    c.train.omega = j.at("omega").get<double>();
    c.train.tau = j.at("tau").get<double>();
    n.n_hid = j.at("n_hid").get<std::size_t>();
    const std::string style = j.at("decoder_style").get<std::string>();
    if (style != "node" && style != "edge") throw ConfigError("decoder_style must be node or edge");
    n.decoder_style = style == "edge" ? DecoderStyle::edge_centric : DecoderStyle::node_centric;
    const std::string sharing = j.at("decoder_sharing").get<std::string>();
    if (sharing != "shared" && sharing != "separate") throw ConfigError("decoder_sharing must be shared or separate");
    n.decoder_sharing = sharing == "separate" ? DecoderSharing::separate : DecoderSharing::shared;
    const std::string agg = j.at("aggregation").get<std::string>();
    if (agg != "mlp" && agg != "sum") throw ConfigError("aggregation must be mlp or sum");
    n.aggregation = agg == "sum" ? Aggregation::sum : Aggregation::mlp;
    n.embed_dim = j.at("embed_dim").get<std::size_t>();
    n.dropout = j.at("dropout").get<double>();

    const auto& opt = j.at("optimizer");
    require_keys(opt, "optimizer", {"lr", "beta1", "beta2", "eps", "grad_clip"});
    c.train.adam = {opt.at("lr").get<double>(), opt.at("beta1").get<double>(), opt.at("beta2").get<double>(),
                    opt.at("eps").get<double>()};
    c.train.grad_clip = opt.at("grad_clip").get<double>();

    const auto& tr = j.at("training");
    require_keys(tr, "training", {"epochs", "batch_size", "patience", "val_fraction", "standardize"});
    c.train.epochs = tr.at("epochs").get<std::size_t>();
    c.train.batch_size = tr.at("batch_size").get<std::size_t>();
    c.train.patience = tr.at("patience").get<std::size_t>();
    c.train.val_fraction = tr.at("val_fraction").get<double>();
    c.train.standardize = tr.at("standardize").get<bool>();

    c.train.seed = j.at("seed").get<std::uint64_t>();
    c.replicates = j.at("replicates").get<std::size_t>();

    const auto& g = j.at("generator");
    require_keys(g, "generator", detail::generator_keys(c.family));
    GeneratorConfig& gc = c.gen;
    switch (c.family) {
      case Family::linear_var:
        gc.density = g.at("density").get<double>();
        gc.relocate_fraction = g.at("relocate_fraction").get<double>();
        gc.spectral_radius = g.at("spectral_radius").get<double>();
        gc.burn_in = g.at("burn_in").get<std::size_t>();
        break;
      case Family::nonlinear_var:
        gc.fix_rule = parse_fix_rule(g.at("fix_rule").get<std::string>());
        gc.burn_in = g.at("burn_in").get<std::size_t>();
        break;
      case Family::lotka_volterra:
        gc.extra_edges = g.at("extra_edges").get<std::size_t>();
        gc.lv.alpha = g.at("alpha").get<double>();
        gc.lv.beta_rate = g.at("beta").get<double>();
        gc.lv.gamma = g.at("gamma").get<double>();
        gc.lv.delta_rate = g.at("delta").get<double>();
        gc.lv.eta = g.at("eta").get<double>();
        gc.lv.dt = g.at("dt").get<double>();
        gc.lv.steps_per_sample = g.at("steps_per_sample").get<std::size_t>();
        gc.lv.obs_noise_sd = g.at("obs_noise_sd").get<double>();
        gc.burn_in = g.at("burn_in").get<std::size_t>();
        break;
      case Family::lorenz96:
        gc.l96.dt = g.at("dt").get<double>();
        gc.l96.steps_per_sample = g.at("steps_per_sample").get<std::size_t>();
        gc.l96.init_sd = g.at("init_sd").get<double>();
        gc.burn_in = g.at("burn_in").get<std::size_t>();
        break;
      case Family::springs:
        gc.springs.k = g.at("k").get<double>();
        gc.springs.dt = g.at("dt").get<double>();
        gc.springs.steps_per_sample = g.at("steps_per_sample").get<std::size_t>();
        gc.springs.box = g.at("box").get<double>();
        gc.springs.vel_norm = g.at("vel_norm").get<double>();
        break;
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

struct SimulatedData {
  TruthSet truth;
  std::vector<Tensor> trajectories;  // M of [T_long, p, d]
};

// Stream ids under the experiment seed; training uses 0 and 1.
inline constexpr std::uint64_t kTruthStream = 1000;
inline constexpr std::uint64_t kSimStream = 1001;  // + entity index

inline SimulatedData simulate(const ExperimentConfig& c, std::size_t replicate = 0) {
  c.validate();
  const std::size_t p = c.train.net.p, M = c.M;
  const std::uint64_t seed = c.train.seed;
  Rng truth_rng = make_rng(seed, kTruthStream, replicate);
  SimulatedData out;
  switch (c.family) {
    case Family::linear_var:
      out.truth = gen_linear_var(p, M, c.gen.density, c.gen.relocate_fraction, c.gen.spectral_radius, truth_rng);
      break;
    case Family::nonlinear_var: out.truth = gen_nonlinear_var(p, M, c.gen.fix_rule, truth_rng); break;
    case Family::lotka_volterra: out.truth = gen_lv(p, M, c.gen.extra_edges, truth_rng); break;
    case Family::lorenz96: out.truth = gen_lorenz96(p, M); break;
    case Family::springs: out.truth = gen_springs(p, M, truth_rng); break;
  }
  SimOptions opt;
  opt.burn_in = c.gen.burn_in;
  for (std::size_t m = 0; m < M; ++m) {
    Rng rng = make_rng(seed, kSimStream + m, replicate);
    const Tensor& z = out.truth.entities[m];
    switch (c.family) {
      case Family::linear_var: out.trajectories.push_back(sim_linear_var(z, c.T_long, rng, opt)); break;
      case Family::nonlinear_var: out.trajectories.push_back(sim_nonlinear_var(z, c.T_long, rng, opt)); break;
      case Family::lotka_volterra: out.trajectories.push_back(sim_lv(z, c.gen.lv, c.T_long, rng, opt)); break;
      case Family::lorenz96:
        out.trajectories.push_back(sim_lorenz96(p, out.truth.strength[m], c.T_long, rng, c.gen.l96, opt));
        break;
      case Family::springs: out.trajectories.push_back(sim_springs(z, c.gen.springs, c.T_long, rng)); break;
    }
  }
  return out;
}

}  // namespace gcvae
