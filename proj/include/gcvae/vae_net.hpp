#pragma once

// Encoder (trajectory -> entity graph distribution -> common graph
// distribution) and decoder (common graph -> entity graph -> trajectory).
//
// Batched layout: N = groups * entities. Windows are [N, T, p, d], edge
// tensors [N, p, p], with z(i, j) the influence of node j on node i.

#include <cmath>
#include <string>
#include <utility>

#include "gcvae/autodiff.hpp"
#include "gcvae/distributions.hpp"
#include "gcvae/nn.hpp"
#include "gcvae/params.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

enum class Mode { continuous, binary };
enum class DecoderStyle { node_centric, edge_centric };
enum class DecoderSharing { shared, separate };
enum class Aggregation { mlp, sum };

struct NetConfig {
  std::size_t p = 0;
  std::size_t d = 1;
  std::size_t T = 20;
  std::size_t q = 1;
  std::size_t n_hid = 64;
  std::size_t embed_dim = 0;  // 0: decoder sees raw lags
  Mode mode = Mode::continuous;
  DecoderStyle decoder_style = DecoderStyle::node_centric;
  DecoderSharing decoder_sharing = DecoderSharing::shared;
  Aggregation aggregation = Aggregation::mlp;
  double dropout = 0.1;

  void validate() const {
    if (p == 0 || d == 0 || T == 0 || n_hid == 0) throw ConfigError("net config: p, d, T, n_hid must be positive");
    if (q < 1) throw ConfigError("net config: q must be at least 1");
    if (T <= q) throw ConfigError("net config: T must exceed q");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("net config: dropout must lie in [0,1)");
  }

  /// Width of one node's lag features as seen by the decoder gate.
  std::size_t lag_width() const { return embed_dim > 0 ? embed_dim : q * d; }
};

inline const char* to_string(Mode m) { return m == Mode::continuous ? "continuous" : "binary"; }
inline const char* to_string(DecoderStyle s) { return s == DecoderStyle::node_centric ? "node" : "edge"; }
inline const char* to_string(DecoderSharing s) { return s == DecoderSharing::shared ? "shared" : "separate"; }
inline const char* to_string(Aggregation a) { return a == Aggregation::mlp ? "mlp" : "sum"; }

// ---- structural ops -------------------------------------------------------

/// [..., p, H] -> [..., p, p, 2H] with e(i, j) = concat(x_i, x_j).
inline Tensor node2edge(const Tensor& x) {
  if (x.rank() < 2) throw ConfigError("node2edge: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t H = x.shape().back();
  const std::size_t p = x.shape()[x.rank() - 2];
  const std::size_t outer = x.size() / (p * H);
  Shape s(x.shape().begin(), x.shape().end() - 1);
  s.push_back(p);
  s.push_back(2 * H);
  Tensor out(s);
  const double* px = x.data().data();
  double* po = out.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        double* dst = po + ((o * p + i) * p + j) * 2 * H;
        std::copy_n(px + (o * p + i) * H, H, dst);
        std::copy_n(px + (o * p + j) * H, H, dst + H);
      }
  return out;
}

inline Var node2edge(const Var& x) {
  return x.tape->record(node2edge(x.value()), {x}, "node2edge", [x](Tape& t, const Tensor& g) {
    const Shape& xs = x.shape();
    const std::size_t H = xs.back();
    const std::size_t p = xs[xs.size() - 2];
    const std::size_t outer = x.size() / (p * H);
    Tensor gx(xs);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          const double* src = g.data().data() + ((o * p + i) * p + j) * 2 * H;
          double* gi = gx.data().data() + (o * p + i) * H;
          double* gj = gx.data().data() + (o * p + j) * H;
          for (std::size_t h = 0; h < H; ++h) {
            gi[h] += src[h];
            gj[h] += src[H + h];
          }
        }
    t.accumulate(x, gx);
  });
}

/// Sum of incoming edge representations: [..., p, p, H] -> [..., p, H].
inline Var edge2node(const Var& e) {
  if (e.shape().size() < 3) throw ConfigError("edge2node: need rank >= 3");
  return sum_axis(e, e.shape().size() - 2);
}

/// linear(node2edge(x)) without materializing the pair tensor:
/// W = [W_recv; W_send] splits into per-node products broadcast over pairs.
inline Var edge_linear(ParamBinder& bind, const std::string& name, const Var& x) {
  const Var w = bind(name + "/W");
  const Var b = bind(name + "/b");
  const std::size_t H = x.shape().back();
  const std::size_t rank = x.shape().size();
  const std::size_t p = x.shape()[rank - 2];
  if (w.shape()[0] != 2 * H) throw ConfigError("edge_linear '" + name + "': weight rows must be 2x input width");
  const std::size_t rows = x.size() / H;
  const Var flat = reshape(x, {rows, H});
  Shape node_shape = x.shape();
  node_shape.back() = w.shape()[1];
  const Var recv = reshape(matmul(flat, slice_axis(w, 0, 0, H)), node_shape);
  const Var send = reshape(matmul(flat, slice_axis(w, 0, H, H)), node_shape);
  return expand_axis(recv, rank - 1, p) + expand_axis(send, rank - 2, p) + b;
}

/// Node-centric gate: lags [N, S, p, D], z [N, p, p] -> [N, S, p, p*D] with
/// out(n, s, i, j*D + k) = lags(n, s, j, k) * z(n, i, j).
inline Var gate_lags(const Var& lags, const Var& z) {
  const Shape& ls = lags.shape();
  const Shape& zs = z.shape();
  if (ls.size() != 4 || zs.size() != 3 || zs[0] != ls[0] || zs[1] != ls[2] || zs[2] != ls[2])
    throw ConfigError("gate_lags: incompatible shapes " + shape_str(ls) + " and " + shape_str(zs));
  const std::size_t N = ls[0], S = ls[1], p = ls[2], D = ls[3];
  Tensor out(Shape{N, S, p, p * D});
  const Tensor& lv = lags.value();
  const Tensor& zv = z.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < p; ++i) {
        double* dst = out.data().data() + ((n * S + s) * p + i) * p * D;
        for (std::size_t j = 0; j < p; ++j) {
          const double zij = zv[(n * p + i) * p + j];
          const double* src = lv.data().data() + ((n * S + s) * p + j) * D;
          for (std::size_t k = 0; k < D; ++k) dst[j * D + k] = src[k] * zij;
        }
      }
  return lags.tape->record(std::move(out), {lags, z}, "gate_lags", [lags, z, N, S, p, D](Tape& t, const Tensor& g) {
    const Tensor& lv = lags.value();
    const Tensor& zv = z.value();
    Tensor gl(lv.shape());
    Tensor gz(zv.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < p; ++i) {
          const double* src = g.data().data() + ((n * S + s) * p + i) * p * D;
          for (std::size_t j = 0; j < p; ++j) {
            const double zij = zv[(n * p + i) * p + j];
            const double* x = lv.data().data() + ((n * S + s) * p + j) * D;
            double* gx = gl.data().data() + ((n * S + s) * p + j) * D;
            double acc = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
              gx[k] += src[j * D + k] * zij;
              acc += src[j * D + k] * x[k];
            }
            gz[(n * p + i) * p + j] += acc;
          }
        }
    t.accumulate(lags, gl);
    t.accumulate(z, gz);
  });
}

/// Edge-centric gate: c [N, S, p, p, H] scaled by z(n, i, j).
inline Var edge_gate(const Var& c, const Var& z) {
  const Shape& cs = c.shape();
  const Shape& zs = z.shape();
  if (cs.size() != 5 || zs.size() != 3 || zs[0] != cs[0] || zs[1] != cs[2] || zs[2] != cs[3])
    throw ConfigError("edge_gate: incompatible shapes " + shape_str(cs) + " and " + shape_str(zs));
  const std::size_t N = cs[0], S = cs[1], pp = cs[2] * cs[3], H = cs[4];
  Tensor out(cs);
  const Tensor& cv = c.value();
  const Tensor& zv = z.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t e = 0; e < pp; ++e) {
        const double ze = zv[n * pp + e];
        const std::size_t off = ((n * S + s) * pp + e) * H;
        for (std::size_t h = 0; h < H; ++h) out[off + h] = cv[off + h] * ze;
      }
  return c.tape->record(std::move(out), {c, z}, "edge_gate", [c, z, N, S, pp, H](Tape& t, const Tensor& g) {
    const Tensor& cv = c.value();
    const Tensor& zv = z.value();
    Tensor gc(cv.shape());
    Tensor gz(zv.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t e = 0; e < pp; ++e) {
          const double ze = zv[n * pp + e];
          const std::size_t off = ((n * S + s) * pp + e) * H;
          double acc = 0.0;
          for (std::size_t h = 0; h < H; ++h) {
            gc[off + h] = g[off + h] * ze;
            acc += g[off + h] * cv[off + h];
          }
          gz[n * pp + e] += acc;
        }
    t.accumulate(c, gc);
    t.accumulate(z, gz);
  });
}

// ---- data layout helpers --------------------------------------------------

/// [N, T, p, d] -> [N, p, T*d]: each node's trajectory flattened.
inline Tensor node_major(const Tensor& w) {
  if (w.rank() != 4) throw ConfigError("expected windows [N,T,p,d], got " + shape_str(w.shape()));
  const std::size_t N = w.dim(0), T = w.dim(1), p = w.dim(2), d = w.dim(3);
  Tensor out(Shape{N, p, T * d});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < d; ++k) out[((n * p + i) * T + t) * d + k] = w[((n * T + t) * p + i) * d + k];
  return out;
}

struct LagPairs {
  Tensor lags;     // [N, T-q, p, q*d], lag 1 first
  Tensor targets;  // [N, T-q, p, d]
};

/// Pairs (x_{t-1..t-q}, x_t) for t = q+1..T, for a batch [N, T, p, d] or a single window [T, p, d].
inline LagPairs lag_preprocess(const Tensor& windows, std::size_t q) {
  const Tensor w = windows.rank() == 3 ? windows.reshaped({1, windows.dim(0), windows.dim(1), windows.dim(2)}) : windows;
  if (w.rank() != 4) throw ConfigError("lag_preprocess: expected [T,p,d] or [N,T,p,d]");
  const std::size_t N = w.dim(0), T = w.dim(1), p = w.dim(2), d = w.dim(3);
  if (q < 1 || T <= q) throw ConfigError("lag_preprocess: need T > q >= 1, got T=" + std::to_string(T) + " q=" + std::to_string(q));
  const std::size_t S = T - q;
  LagPairs out{Tensor(Shape{N, S, p, q * d}), Tensor(Shape{N, S, p, d})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t t = s + q;
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < d; ++k) out.targets[((n * S + s) * p + i) * d + k] = w[((n * T + t) * p + i) * d + k];
        for (std::size_t l = 1; l <= q; ++l)
          for (std::size_t k = 0; k < d; ++k)
            out.lags[((n * S + s) * p + i) * q * d + (l - 1) * d + k] = w[((n * T + t - l) * p + i) * d + k];
      }
    }
  return out;
}

// ---- parameters -----------------------------------------------------------

inline ParamStore init_params(const NetConfig& c, Rng& rng) {
  c.validate();
  const std::size_t H = c.n_hid;
  ParamStore ps;
  init_mlp(ps, "enc/embed", c.T * c.d, H, H, rng);
  init_mlp(ps, "enc/mlp1", 2 * H, H, H, rng);
  init_mlp(ps, "enc/mlp2", H, H, H, rng);
  init_mlp(ps, "enc/mlp3", 2 * H, H, H, rng);
  if (c.mode == Mode::continuous) {
    init_linear(ps, "enc/mu", H, 1, rng);
    init_linear(ps, "enc/var", H, 1, rng);
  } else {
    init_mlp(ps, "enc/delta", H, H, 1, rng);
  }

  const std::size_t D = c.lag_width();
  if (c.embed_dim > 0) init_mlp(ps, "dec/embed", c.q * c.d, H, c.embed_dim, rng);
  if (c.decoder_style == DecoderStyle::node_centric) {
    if (c.aggregation == Aggregation::sum) {
      ps["dec/var_bias"] = Tensor(Shape{c.d});
      if (c.embed_dim > 0) init_linear(ps, "dec/sum_out", c.embed_dim, c.d, rng);
      return ps;
    }
    const std::size_t blocks = c.decoder_sharing == DecoderSharing::shared ? 1 : c.p;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::string pre = blocks == 1 ? "dec" : "dec/node" + std::to_string(b);
      init_mlp(ps, pre + "/mlp", c.p * D, H, H, rng);
      init_linear(ps, pre + "/mean", H, c.d, rng);
      init_linear(ps, pre + "/var", H, c.d, rng);
    }
  } else {
    init_mlp(ps, "dec/edge", 2 * D, H, H, rng);
    init_linear(ps, "dec/out", H, H, rng);
    init_linear(ps, "dec/mean", H, c.d, rng);
    init_linear(ps, "dec/var", H, c.d, rng);
  }
  return ps;
}

// ---- encoder --------------------------------------------------------------

/// Per-node embeddings [N, p, H] from windows [N, T, p, d] (or one window [T, p, d]).
inline Var embed_nodes(ParamBinder& bind, const NetConfig& c, const Tensor& windows, Rng* dropout_rng = nullptr) {
  const Tensor w = windows.rank() == 3 ? windows.reshaped({1, windows.dim(0), windows.dim(1), windows.dim(2)}) : windows;
  if (w.rank() != 4 || w.dim(1) != c.T || w.dim(2) != c.p || w.dim(3) != c.d)
    throw ConfigError("embed_nodes: window shape " + shape_str(windows.shape()) + " does not match config [T=" +
                      std::to_string(c.T) + ",p=" + std::to_string(c.p) + ",d=" + std::to_string(c.d) + "]");
  const Var x = bind.tape().constant(node_major(w));
  return linear(bind, "enc/embed/fc2", dropout(relu(linear(bind, "enc/embed/fc1", x)), c.dropout, dropout_rng));
}

/// node2edge -> MLP1 -> edge2node -> MLP2 -> node2edge -> MLP3: [N, p, H] -> [N, p, p, H].
inline Var message_pass(ParamBinder& bind, const Var& emb) {
  Var e = linear(bind, "enc/mlp1/fc2", relu(edge_linear(bind, "enc/mlp1/fc1", emb)));
  Var n = mlp(bind, "enc/mlp2", edge2node(e));
  return linear(bind, "enc/mlp3/fc2", relu(edge_linear(bind, "enc/mlp3/fc1", n)));
}

struct EntityDist {
  Mode mode = Mode::continuous;
  EdgeGaussian<Var> gauss;  // continuous
  EdgeBernoulli<Var> bern;  // binary
};

inline Var drop_last(const Var& v) {
  Shape s = v.shape();
  s.pop_back();
  return reshape(v, s);
}

/// Heads on h [N, p, p, H] -> per-edge distribution [N, p, p].
inline EntityDist emit_entity_dist(ParamBinder& bind, const NetConfig& c, const Var& h) {
  EntityDist out;
  out.mode = c.mode;
  if (c.mode == Mode::continuous) {
    out.gauss.mu = drop_last(linear(bind, "enc/mu", h));
    out.gauss.var = clamp_min(softplus(drop_last(linear(bind, "enc/var", h))), kVarFloor);
  } else {
    out.bern.delta = clamp(sigmoid(drop_last(mlp(bind, "enc/delta", h))), kProbEps, 1.0 - kProbEps);
  }
  return out;
}

inline EntityDist encode(ParamBinder& bind, const NetConfig& c, const Tensor& windows, Rng* dropout_rng = nullptr) {
  return emit_entity_dist(bind, c, message_pass(bind, embed_nodes(bind, c, windows, dropout_rng)));
}

// ---- entity <-> common ----------------------------------------------------

/// Population mean / variance across the entity axis of [..., M, p, p] samples.
template <class T>
EdgeGaussian<T> entity_to_common_gaussian(const T& samples, std::size_t entity_axis) {
  const std::size_t M = samples.shape().at(entity_axis);
  if (M < 2) throw ConfigError("entity_to_common: need at least 2 entities, got " + std::to_string(M));
  const T mean = mean_axis(samples, entity_axis);
  const T dev = samples - expand_axis(mean, entity_axis, M);
  return {mean, clamp_min(mean_axis(square(dev), entity_axis), kVarFloor)};
}

/// Beta moment match across the entity axis. The concentration
/// k = m(1-m)/v - 1 is raised where needed so the smaller shape is at least 1:
/// the mean is kept and spreads too wide for a unimodal Beta give a flat or
/// J-shaped one instead of a U-shaped one.
template <class T>
EdgeBeta<T> entity_to_common_beta(const T& samples, std::size_t entity_axis) {
  const std::size_t M = samples.shape().at(entity_axis);
  if (M < 2) throw ConfigError("entity_to_common: need at least 2 entities, got " + std::to_string(M));
  const T m = clamp(mean_axis(samples, entity_axis), kProbEps, 1.0 - kProbEps);
  const T dev = samples - expand_axis(m, entity_axis, M);
  const T v = clamp_min(mean_axis(square(dev), entity_axis), kVarFloor);
  const T k = m * (1.0 - m) / v - 1.0;
  const T k_min = 1.0 / (m - relu(m * 2.0 - 1.0));  // 1 / min(m, 1-m)
  const T kk = k + relu(k_min - k);
  return {m * kk, (1.0 - m) * kk};
}

/// Unadjusted decoder distribution carrying only common information.
template <class T>
EdgeGaussian<T> common_to_entity_gaussian(const T& zbar) {
  return {zbar, zbar * 0.0 + 1.0};
}

template <class T>
EdgeBernoulli<T> common_to_entity_bernoulli(const T& zbar) {
  return {clamp(zbar, kProbEps, 1.0 - kProbEps)};
}

// ---- decoder --------------------------------------------------------------

struct Prediction {
  Var mu;   // [N, S, p, d]
  Var var;  // [N, S, p, d]
};

inline Var decoder_lags(ParamBinder& bind, const NetConfig& c, const Tensor& lags) {
  const Var x = bind.tape().constant(lags);
  return c.embed_dim > 0 ? mlp(bind, "dec/embed", x) : x;
}

/// Node-centric decoder. z [N, p, p], lags [N, S, p, q*d].
inline Prediction gate_predict(ParamBinder& bind, const NetConfig& c, const Tensor& lags, const Var& z) {
  const Var xl = decoder_lags(bind, c, lags);
  const std::size_t N = lags.dim(0), S = lags.dim(1), p = c.p;
  const Var u = gate_lags(xl, z);  // [N, S, p, p*D]
  if (c.aggregation == Aggregation::sum) {
    // Sum over source nodes. Without an embedding this is the linear-VAR special case on lag 1;
    // with one, an additive model read out by a linear map.
    const std::size_t D = c.lag_width();
    Var mean = sum_axis(reshape(u, {N, S, p, p, D}), 3);
    if (c.embed_dim > 0)
      mean = linear(bind, "dec/sum_out", mean);
    else if (D != c.d)
      mean = slice_axis(mean, 3, 0, c.d);
    const Var var = clamp_min(softplus(bind("dec/var_bias")), kVarFloor);
    return {mean, mean * 0.0 + var};
  }
  auto head = [&](const std::string& pre, const Var& in) {
    const Var hid = relu(mlp(bind, pre + "/mlp", in));
    return Prediction{linear(bind, pre + "/mean", hid), clamp_min(softplus(linear(bind, pre + "/var", hid)), kVarFloor)};
  };
  if (c.decoder_sharing == DecoderSharing::shared) return head("dec", u);
  std::vector<Var> mus, vars;
  for (std::size_t i = 0; i < p; ++i) {
    Prediction pi = head("dec/node" + std::to_string(i), slice_axis(u, 2, i, 1));
    mus.push_back(pi.mu);
    vars.push_back(pi.var);
  }
  return {concat_axis(mus, 2), concat_axis(vars, 2)};
}

/// Edge-centric decoder: node2edge on lags -> MLP -> gate by z -> edge2node -> heads.
inline Prediction edge_centric_decode(ParamBinder& bind, const NetConfig& c, const Tensor& lags, const Var& z) {
  const Var xl = decoder_lags(bind, c, lags);
  const Var e = linear(bind, "dec/edge/fc2", relu(edge_linear(bind, "dec/edge/fc1", xl)));  // [N,S,p,p,H]
  const Var agg = edge2node(edge_gate(e, z));                                                  // [N,S,p,H]
  const Var hid = relu(linear(bind, "dec/out", agg));
  return {linear(bind, "dec/mean", hid), clamp_min(softplus(linear(bind, "dec/var", hid)), kVarFloor)};
}

inline Prediction decode(ParamBinder& bind, const NetConfig& c, const Tensor& lags, const Var& z) {
  return c.decoder_style == DecoderStyle::node_centric ? gate_predict(bind, c, lags, z)
                                                       : edge_centric_decode(bind, c, lags, z);
}

/// Gaussian negative log-likelihood sum((y-mu)^2/var + log var).
inline Var gaussian_nll(const Prediction& pred, const Tensor& targets) {
  return sum(square(pred.mu - targets) / pred.var + log(pred.var));
}

}  // namespace gcvae
