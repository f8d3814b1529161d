#pragma once

// Windowing, the two-level ELBO, the training loop and graph inference.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gcvae/autodiff.hpp"
#include "gcvae/distributions.hpp"
#include "gcvae/errors.hpp"
#include "gcvae/params.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/tensor.hpp"
#include "gcvae/vae_net.hpp"

namespace gcvae {

struct TrainConfig {
  NetConfig net;
  double omega = 0.5;
  double tau = 0.5;
  std::size_t stride = 10;
  std::size_t epochs = 100;
  std::size_t batch_size = 1;  // groups per optimizer step
  std::size_t patience = 10;
  double val_fraction = 0.1;
  AdamConfig adam;
  double grad_clip = 100.0;
  std::uint64_t seed = 0;
  bool standardize = true;
  std::optional<Tensor> edge_mask;  // p x p; nonzero entries are forced to 0 after sampling

  void validate() const {
    net.validate();
    if (omega < 0.0 || omega > 1.0) throw ConfigError("omega must lie in [0,1]");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (stride < 1) throw ConfigError("stride must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0,1)");
    if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
    if (edge_mask && edge_mask->shape() != Shape{net.p, net.p}) throw ConfigError("edge_mask must be p x p");
  }
};

/// Non-finite loss or gradient. Carries the parameters from the last finite step.
class TrainingDiverged : public TrainingError {
 public:
  TrainingDiverged(const std::string& msg, ParamStore last_good)
      : TrainingError(msg), last_good_(std::move(last_good)) {}
  const ParamStore& last_good() const { return last_good_; }

 private:
  ParamStore last_good_;
};

// ---- windows --------------------------------------------------------------

struct Window {
  std::size_t entity = 0;
  std::size_t offset = 0;
  Tensor values;  // [T, p, d]
};

inline std::size_t window_count(std::size_t T_long, std::size_t T, std::size_t s) {
  if (s < 1) throw ConfigError("stride must be at least 1");
  if (T_long < T) throw ConfigError("trajectory length " + std::to_string(T_long) + " shorter than window " + std::to_string(T));
  return (T_long - T) / s + 1;
}

/// Contiguous [T, p, d] slices starting at 0, s, 2s, ...
inline std::vector<Window> make_windows(const Tensor& traj, std::size_t T, std::size_t s, std::size_t entity = 0) {
  if (traj.rank() != 3) throw ConfigError("trajectory must be [T,p,d], got " + shape_str(traj.shape()));
  const std::size_t n = window_count(traj.dim(0), T, s);
  std::vector<Window> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back({entity, k * s, slice_axis(traj, 0, k * s, T)});
  return out;
}

/// Zero mean, unit variance per feature dimension, pooled over time and nodes.
inline Tensor standardize(const Tensor& traj) {
  const std::size_t T = traj.dim(0), p = traj.dim(1), d = traj.dim(2);
  Tensor out = traj;
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < p; ++i) mean += traj[(t * p + i) * d + k];
    mean /= static_cast<double>(T * p);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < p; ++i) var += std::pow(traj[(t * p + i) * d + k] - mean, 2);
    const double sd = std::sqrt(var / static_cast<double>(T * p));
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < p; ++i) out[(t * p + i) * d + k] = (traj[(t * p + i) * d + k] - mean) * inv;
  }
  return out;
}

/// Aligned windows of every entity: groups[n] holds window n of each entity.
class GroupedWindows {
 public:
  GroupedWindows(const std::vector<Tensor>& trajectories, const TrainConfig& cfg) : T_(cfg.net.T) {
    if (trajectories.empty()) throw ConfigError("dataset has no entities");
    for (const auto& tr : trajectories) {
      if (tr.rank() != 3 || tr.dim(1) != cfg.net.p || tr.dim(2) != cfg.net.d)
        throw ConfigError("trajectory shape " + shape_str(tr.shape()) + " does not match p=" + std::to_string(cfg.net.p) +
                          ", d=" + std::to_string(cfg.net.d));
      data_.push_back(cfg.standardize ? standardize(tr) : tr);
    }
    stride_ = cfg.stride;
    groups_ = std::numeric_limits<std::size_t>::max();
    for (const auto& tr : data_) groups_ = std::min(groups_, window_count(tr.dim(0), T_, stride_));
    p_ = cfg.net.p;
    d_ = cfg.net.d;
  }

  std::size_t groups() const { return groups_; }
  std::size_t entities() const { return data_.size(); }
  const std::vector<Tensor>& data() const { return data_; }

  /// Batch tensor [G, M, T, p, d] for the given group ids.
  Tensor batch(std::span<const std::size_t> ids) const {
    const std::size_t M = data_.size();
    const std::size_t block = T_ * p_ * d_;
    Tensor out(Shape{ids.size(), M, T_, p_, d_});
    for (std::size_t g = 0; g < ids.size(); ++g)
      for (std::size_t m = 0; m < M; ++m) {
        const double* src = data_[m].data().data() + ids[g] * stride_ * p_ * d_;
        std::copy_n(src, block, out.data().data() + (g * M + m) * block);
      }
    return out;
  }

  /// Windows of one entity, [count, T, p, d], starting at window `first`.
  Tensor entity_windows(std::size_t m, std::size_t first, std::size_t count) const {
    const std::size_t block = T_ * p_ * d_;
    Tensor out(Shape{count, T_, p_, d_});
    for (std::size_t k = 0; k < count; ++k)
      std::copy_n(data_[m].data().data() + (first + k) * stride_ * p_ * d_, block, out.data().data() + k * block);
    return out;
  }

 private:
  std::vector<Tensor> data_;
  std::size_t T_ = 0, stride_ = 1, groups_ = 0, p_ = 0, d_ = 0;
};

// ---- loss -----------------------------------------------------------------

struct ElboParts {
  Var total;
  Var recon;
  Var kl_common;
  Var kl_entity;
};

/// Zero the masked entries of a sampled graph.
inline Tensor apply_edge_mask(const Tensor& z, const Tensor& mask) {
  if (mask.rank() != 2 || z.rank() < 2 || z.shape()[z.rank() - 2] != mask.dim(0) || z.shape().back() != mask.dim(1))
    throw ConfigError("edge mask shape " + shape_str(mask.shape()) + " does not match graph " + shape_str(z.shape()));
  return z * map(mask, [](double v) { return v != 0.0 ? 0.0 : 1.0; });
}

inline Var apply_edge_mask(const Var& z, const Tensor& mask) {
  if (mask.rank() != 2 || z.shape().back() != mask.dim(1)) throw ConfigError("edge mask shape mismatch");
  return z * map(mask, [](double v) { return v != 0.0 ? 0.0 : 1.0; });
}

/// One encode-sample-decode pass over windows [G, M, T, p, d]; the loss is
/// averaged over the G groups. With M = 1 there is no common layer and the
/// entity graph is regularized toward N(0,1) or Ber(0.5) directly.
inline ElboParts elbo_loss(ParamBinder& bind, const TrainConfig& cfg, const Tensor& windows, Rng& rng, bool train) {
  if (windows.rank() != 5) throw ConfigError("elbo_loss: expected [G,M,T,p,d] windows");
  const NetConfig& net = cfg.net;
  Tape& tape = bind.tape();
  const std::size_t G = windows.dim(0), M = windows.dim(1), p = net.p;
  const std::size_t N = G * M;
  const Tensor flat = windows.reshaped({N, net.T, p, net.d});
  const EntityDist enc = encode(bind, net, flat, train ? &rng : nullptr);
  const LagPairs lag = lag_preprocess(flat, net.q);
  const Shape edge_shape{N, p, p};
  const Shape common_shape{G, p, p};
  auto expand_common = [&](const Var& zbar) { return reshape(expand_axis(zbar, 1, M), edge_shape); };

  Var z;
  Var kl_common = tape.constant(Tensor::scalar(0.0));
  Var kl_entity;
  if (net.mode == Mode::continuous) {
    const EdgeGaussian<Var>& q = enc.gauss;
    if (M >= 2) {
      const Var z_ent = gaussian_reparam(q.mu, q.var, normal_tensor(rng, edge_shape));
      const EdgeGaussian<Var> qbar = merge_prior(entity_to_common_gaussian(reshape(z_ent, {G, M, p, p}), 1));
      const EdgeGaussian<Var> prior{tape.constant(Tensor(common_shape, 0.0)), tape.constant(Tensor(common_shape, 1.0))};
      kl_common = sum(kl_gaussian(qbar, prior));
      const Var zbar = gaussian_reparam(qbar.mu, qbar.var, normal_tensor(rng, common_shape));
      const EdgeGaussian<Var> dec = common_to_entity_gaussian(expand_common(zbar));
      const EdgeGaussian<Var> adj = conjugacy_adjust_gaussian(q, dec, cfg.omega);
      kl_entity = sum(kl_gaussian(adj, dec));
      z = gaussian_reparam(adj.mu, adj.var, normal_tensor(rng, edge_shape));
    } else {
      const EdgeGaussian<Var> prior{tape.constant(Tensor(edge_shape, 0.0)), tape.constant(Tensor(edge_shape, 1.0))};
      kl_entity = sum(kl_gaussian(q, prior));
      z = gaussian_reparam(q.mu, q.var, normal_tensor(rng, edge_shape));
    }
  } else {
    const EdgeBernoulli<Var>& q = enc.bern;
    auto relaxed = [&](const Var& delta) {
      const Tensor g0 = gumbel_tensor(rng, edge_shape);
      const Tensor g1 = gumbel_tensor(rng, edge_shape);
      return gumbel_softmax(delta, cfg.tau, g0, g1);
    };
    if (M >= 2) {
      const Var z_ent = relaxed(q.delta);
      const EdgeBeta<Var> qbar = merge_prior(entity_to_common_beta(reshape(z_ent, {G, M, p, p}), 1));
      const EdgeBeta<Var> prior{tape.constant(Tensor(common_shape, 1.0)), tape.constant(Tensor(common_shape, 1.0))};
      kl_common = sum(kl_beta(qbar, prior));
      const Var zbar = beta_implicit_sample(qbar.alpha, qbar.beta, rng);
      const EdgeBernoulli<Var> dec = common_to_entity_bernoulli(expand_common(zbar));
      const EdgeBernoulli<Var> adj = conjugacy_adjust_bernoulli(q, dec, cfg.omega);
      kl_entity = sum(kl_bernoulli(adj, dec));
      z = relaxed(adj.delta);
    } else {
      kl_entity = sum(kl_bernoulli(q, EdgeBernoulli<Var>{tape.constant(Tensor(edge_shape, 0.5))}));
      z = relaxed(q.delta);
    }
  }
  if (cfg.edge_mask) z = apply_edge_mask(z, *cfg.edge_mask);

  const Var recon = gaussian_nll(decode(bind, net, lag.lags, z), lag.targets);
  const double inv_g = 1.0 / static_cast<double>(G);
  ElboParts out{Var{}, recon * inv_g, kl_common * inv_g, kl_entity * inv_g};
  out.total = out.recon + out.kl_common + out.kl_entity;
  return out;
}

// ---- training -------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double recon = 0.0;
  double kl_common = 0.0;
  double kl_entity = 0.0;
  double total = 0.0;
  double val_total = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ParamStore params;      // best validation (or final, without validation)
  ParamStore initial;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochLog&, const ParamStore&)>;

inline double mean_val_loss(const ParamStore& params, const TrainConfig& cfg, const GroupedWindows& data,
                            const std::vector<std::size_t>& ids) {
  Rng rng = make_rng(cfg.seed, 0x7A1u);
  double acc = 0.0;
  for (std::size_t k = 0; k < ids.size(); k += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, ids.size() - k);
    Tape tape;
    ParamBinder bind(tape, params, false);
    const ElboParts parts = elbo_loss(bind, cfg, data.batch(std::span(ids).subspan(k, n)), rng, false);
    acc += parts.total.value().item() * static_cast<double>(n);
  }
  return acc / static_cast<double>(ids.size());
}

/// Steps 0-7 per group batch plus backward pass and Adam update, with early
/// stopping on validation loss. Deterministic given cfg.seed.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Tensor>& trajectories,
                         const EpochCallback& on_epoch = nullptr) {
  cfg.validate();
  const GroupedWindows data(trajectories, cfg);
  Rng init_rng = make_rng(cfg.seed, 0);
  Rng rng = make_rng(cfg.seed, 1);

  TrainResult result;
  result.initial = init_params(cfg.net, init_rng);
  ParamStore params = result.initial;
  result.params = params;

  const std::size_t n_groups = data.groups();
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n_groups)));
  if (cfg.val_fraction > 0.0 && n_val == 0 && n_groups >= 2) n_val = 1;
  const std::size_t n_train = n_groups - n_val;
  if (n_train == 0) throw ConfigError("no training windows after the validation split");
  std::vector<std::size_t> train_ids(n_train), val_ids(n_val);
  std::iota(train_ids.begin(), train_ids.end(), 0);
  std::iota(val_ids.begin(), val_ids.end(), n_train);

  OptimizerState opt;
  opt.cfg = cfg.adam;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_ids.begin(), train_ids.end(), rng);
    EpochLog row;
    row.epoch = epoch;
    for (std::size_t k = 0; k < n_train; k += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, n_train - k);
      Tape tape;
      ParamBinder bind(tape, params, true);
      const ElboParts parts = elbo_loss(bind, cfg, data.batch(std::span(train_ids).subspan(k, n)), rng, true);
      const double total = parts.total.value().item();
      if (!std::isfinite(total)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                                   " (recon=" + std::to_string(parts.recon.value().item()) +
                                   ", kl_common=" + std::to_string(parts.kl_common.value().item()) +
                                   ", kl_entity=" + std::to_string(parts.kl_entity.value().item()) + ")",
                               params);
      }
      tape.backward(parts.total);
      GradStore grads = bind.grads();
      try {
        check_finite(grads);
      } catch (const TrainingError& e) {
        throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch), params);
      }
      clip_global_norm(grads, cfg.grad_clip);
      optimizer_step(params, grads, opt);
      const double w = static_cast<double>(n);
      row.recon += parts.recon.value().item() * w;
      row.kl_common += parts.kl_common.value().item() * w;
      row.kl_entity += parts.kl_entity.value().item() * w;
      row.total += total * w;
    }
    const double inv = 1.0 / static_cast<double>(n_train);
    row.recon *= inv;
    row.kl_common *= inv;
    row.kl_entity *= inv;
    row.total *= inv;
    const double monitored = n_val > 0 ? (row.val_total = mean_val_loss(params, cfg, data, val_ids)) : row.total;
    result.log.push_back(row);
    if (on_epoch) on_epoch(row, params);
    if (monitored < best) {
      best = monitored;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

// ---- inference ------------------------------------------------------------

struct InferenceResult {
  Tensor common;                 // p x p point estimate
  std::vector<Tensor> entities;  // M of p x p
  // Distribution parameters averaged over windows / groups:
  // continuous (mu, var); binary entity (delta, -) and common (alpha, beta).
  std::vector<std::pair<Tensor, Tensor>> entity_params;
  std::pair<Tensor, Tensor> common_params;
};

/// Encoder parameters for every window of entity m, in chunks, eval mode.
inline std::vector<EntityDist> encode_all(const ParamStore& params, const NetConfig& net, const GroupedWindows& data,
                                          std::size_t m, Tape& tape, std::size_t count) {
  std::vector<EntityDist> out;
  ParamBinder bind(tape, params, false);
  constexpr std::size_t kChunk = 64;
  for (std::size_t k = 0; k < count; k += kChunk) {
    const std::size_t n = std::min(kChunk, count - k);
    out.push_back(encode(bind, net, data.entity_windows(m, k, n)));
  }
  return out;
}

/// Mode extraction: entity graphs from window-averaged encoder parameters;
/// the common graph from entity_to_common on each group's entity modes,
/// merged with the prior and averaged over groups.
inline InferenceResult infer_graphs(const ParamStore& params, const TrainConfig& cfg,
                                    const std::vector<Tensor>& trajectories) {
  cfg.validate();
  const GroupedWindows data(trajectories, cfg);
  const NetConfig& net = cfg.net;
  const std::size_t M = data.entities(), p = net.p, n_groups = data.groups();
  const bool cont = net.mode == Mode::continuous;

  InferenceResult res;
  std::vector<Tensor> per_window_mode(M);  // [n_groups, p, p] entity modes by window
  for (std::size_t m = 0; m < M; ++m) {
    Tape tape;
    const auto chunks = encode_all(params, net, data, m, tape, n_groups);
    Tensor a(Shape{n_groups, p, p}), b(Shape{n_groups, p, p});
    std::size_t row = 0;
    for (const auto& c : chunks) {
      const Tensor& va = cont ? c.gauss.mu.value() : c.bern.delta.value();
      std::copy(va.data().begin(), va.data().end(), a.data().begin() + row * p * p);
      if (cont) std::copy(c.gauss.var.value().data().begin(), c.gauss.var.value().data().end(), b.data().begin() + row * p * p);
      row += va.dim(0);
    }
    Tensor mean_a = mean_axis(a, 0);
    Tensor mean_b = cont ? mean_axis(b, 0) : Tensor(Shape{p, p});
    res.entities.push_back(mean_a);
    res.entity_params.emplace_back(mean_a, mean_b);
    per_window_mode[m] = std::move(a);
  }

  if (M < 2) {
    res.common = res.entities.front();
    res.common_params = res.entity_params.front();
    return res;
  }
  // Stack modes to [n_groups, M, p, p] and aggregate over entities per group.
  Tensor stacked(Shape{n_groups, M, p, p});
  for (std::size_t g = 0; g < n_groups; ++g)
    for (std::size_t m = 0; m < M; ++m)
      std::copy_n(per_window_mode[m].data().data() + g * p * p, p * p, stacked.data().data() + (g * M + m) * p * p);
  if (cont) {
    const EdgeGaussian<Tensor> c = merge_prior(entity_to_common_gaussian(stacked, 1));
    res.common_params = {mean_axis(c.mu, 0), mean_axis(c.var, 0)};
    res.common = res.common_params.first;
  } else {
    const EdgeBeta<Tensor> c = merge_prior(entity_to_common_beta(stacked, 1));
    res.common_params = {mean_axis(c.alpha, 0), mean_axis(c.beta, 0)};
    res.common = beta_mode({res.common_params.first, res.common_params.second});
  }
  return res;
}

/// RSS(z) - RSS(z with S zeroed) using decoder mean predictions from
/// observed lags over the whole trajectory [T, p, d].
inline double predictive_strength(const ParamStore& params, const TrainConfig& cfg, const Tensor& z_hat,
                                  const Tensor& traj, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  const NetConfig& net = cfg.net;
  if (z_hat.shape() != Shape{net.p, net.p}) throw ConfigError("predictive_strength: z must be p x p");
  if (edges.empty()) return 0.0;
  if (traj.rank() != 3) throw ConfigError("predictive_strength: trajectory must be [T,p,d]");
  const Tensor x = cfg.standardize ? standardize(traj) : traj;
  const LagPairs lag = lag_preprocess(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}), net.q);
  auto rss = [&](const Tensor& z) {
    Tape tape;
    ParamBinder bind(tape, params, false);
    const Prediction pred = decode(bind, net, lag.lags, tape.constant(z.reshaped({1, net.p, net.p})));
    const double s = sum_all(square(pred.mu.value() - lag.targets));
    return s / static_cast<double>(lag.targets.dim(1));
  };
  Tensor nulled = z_hat;
  for (auto [i, j] : edges) {
    if (i >= net.p || j >= net.p) throw ConfigError("predictive_strength: edge index out of range");
    nulled.at({i, j}) = 0.0;
  }
  if (nulled == z_hat) return 0.0;
  return rss(z_hat) - rss(nulled);
}

// ---- encoder-only supervision ----------------------------------------------

/// Squared error of the encoder's posterior mean against a fixed p x p label,
/// summed over edges and averaged over the windows [N, T, p, d].
inline Var encoder_label_loss(ParamBinder& bind, const NetConfig& net, const Tensor& windows, const Tensor& label,
                              Rng* dropout_rng = nullptr) {
  if (net.mode != Mode::continuous) throw ConfigError("encoder supervision needs continuous mode");
  if (label.shape() != Shape{net.p, net.p}) throw ConfigError("encoder supervision: label must be p x p");
  const Var mu = encode(bind, net, windows, dropout_rng).gauss.mu;
  return sum(square(mu - label)) / static_cast<double>(mu.shape()[0]);
}

struct SupervisionResult {
  ParamStore params;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

/// Adam on encoder_label_loss over shuffled minibatches of `train`; losses are
/// evaluated without dropout after the last epoch.
inline SupervisionResult supervise_encoder(const NetConfig& net, const Tensor& train, const Tensor& test,
                                           const Tensor& label, std::size_t epochs, std::size_t batch,
                                           const AdamConfig& adam, std::uint64_t seed) {
  net.validate();
  if (train.rank() != 4 || train.dim(0) == 0 || batch == 0) throw ConfigError("supervise_encoder: bad batch setup");
  Rng init_rng = make_rng(seed, 0);
  Rng rng = make_rng(seed, 1);
  SupervisionResult res;
  res.params = init_params(net, init_rng);
  OptimizerState opt;
  opt.cfg = adam;
  const std::size_t N = train.dim(0);
  std::vector<std::size_t> ids(N);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t k = 0; k < N; k += batch) {
      const std::size_t n = std::min(batch, N - k);
      std::vector<Tensor> rows;
      for (std::size_t r = 0; r < n; ++r) rows.push_back(slice_axis(train, 0, ids[k + r], 1));
      Tape tape;
      ParamBinder bind(tape, res.params, true);
      const Var loss = encoder_label_loss(bind, net, concat_axis(rows, 0), label, &rng);
      tape.backward(loss);
      GradStore grads = bind.grads();
      check_finite(grads);
      optimizer_step(res.params, grads, opt);
    }
  }
  auto eval = [&](const Tensor& w) {
    if (w.rank() != 4 || w.dim(0) == 0) return std::numeric_limits<double>::quiet_NaN();
    Tape tape;
    ParamBinder bind(tape, res.params, false);
    return encoder_label_loss(bind, net, w, label).value().item();
  };
  res.train_loss = eval(train);
  res.test_loss = eval(test);
  return res;
}

}  // namespace gcvae
