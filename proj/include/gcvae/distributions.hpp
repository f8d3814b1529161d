#pragma once

// Per-edge distribution containers, closed-form KL divergences, conjugacy
// adjustment, prior merging and reparameterized samplers.
//
// Functions templated on T work on both Tensor (plain values) and Var
// (recorded on a tape); they rely only on the free functions both types share.

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

#include "gcvae/autodiff.hpp"
#include "gcvae/errors.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/special.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

inline constexpr double kVarFloor = 1e-6;
inline constexpr double kProbEps = 1e-6;
inline constexpr double kShapeFloor = 1e-2;

template <class T>
struct EdgeGaussian {
  T mu;
  T var;
};

template <class T>
struct EdgeBernoulli {
  T delta;
};

template <class T>
struct EdgeBeta {
  T alpha;
  T beta;
};

// ---- KL divergences -------------------------------------------------------

template <class T>
T kl_gaussian(const EdgeGaussian<T>& q, const EdgeGaussian<T>& p) {
  return 0.5 * (log(p.var / q.var) + (q.var + square(q.mu - p.mu)) / p.var - 1.0);
}

template <class T>
T kl_bernoulli(const EdgeBernoulli<T>& q, const EdgeBernoulli<T>& p) {
  const T one_q = 1.0 - q.delta;
  return q.delta * log(q.delta / p.delta) + one_q * log(one_q / (1.0 - p.delta));
}

template <class T>
T kl_beta(const EdgeBeta<T>& q, const EdgeBeta<T>& p) {
  const T sq = q.alpha + q.beta;
  const T sp = p.alpha + p.beta;
  const T log_b_p = log_gamma(p.alpha) + log_gamma(p.beta) - log_gamma(sp);
  const T log_b_q = log_gamma(q.alpha) + log_gamma(q.beta) - log_gamma(sq);
  return log_b_p - log_b_q + (q.alpha - p.alpha) * digamma(q.alpha) + (q.beta - p.beta) * digamma(q.beta) +
         (sp - sq) * digamma(sq);
}

template <class T>
T kl_divergence(const EdgeGaussian<T>& q, const EdgeGaussian<T>& p) { return kl_gaussian(q, p); }
template <class T>
T kl_divergence(const EdgeBernoulli<T>& q, const EdgeBernoulli<T>& p) { return kl_bernoulli(q, p); }
template <class T>
T kl_divergence(const EdgeBeta<T>& q, const EdgeBeta<T>& p) { return kl_beta(q, p); }

/// Runtime-tagged edge distribution, used where the variant is only known from config.
using GraphDistribution = std::variant<EdgeGaussian<Tensor>, EdgeBernoulli<Tensor>, EdgeBeta<Tensor>>;

inline Tensor kl_divergence(const GraphDistribution& q, const GraphDistribution& p) {
  if (q.index() != p.index()) throw ContractViolation("kl_divergence: mismatched distribution variants");
  return std::visit(
      [&p](const auto& qq) -> Tensor {
        using D = std::decay_t<decltype(qq)>;
        return kl_divergence(qq, std::get<D>(p));
      },
      q);
}

// ---- conjugacy adjustment and prior merge ---------------------------------

template <class T>
EdgeGaussian<T> conjugacy_adjust_gaussian(const EdgeGaussian<T>& q, const EdgeGaussian<T>& p, double omega) {
  if (omega < 0.0 || omega > 1.0) throw ConfigError("omega must lie in [0,1]");
  if (omega == 1.0) return q;
  if (omega == 0.0) return p;
  const T wq = omega / q.var;
  const T wp = (1.0 - omega) / p.var;
  const T prec = wq + wp;
  return {(wq * q.mu + wp * p.mu) / prec, 1.0 / prec};
}

template <class T>
EdgeBernoulli<T> conjugacy_adjust_bernoulli(const EdgeBernoulli<T>& q, const EdgeBernoulli<T>& p, double omega) {
  if (omega < 0.0 || omega > 1.0) throw ConfigError("omega must lie in [0,1]");
  if (omega == 1.0) return {clamp(q.delta, kProbEps, 1.0 - kProbEps)};
  if (omega == 0.0) return {clamp(p.delta, kProbEps, 1.0 - kProbEps)};
  return {clamp(1.0 / (omega / q.delta + (1.0 - omega) / p.delta), kProbEps, 1.0 - kProbEps)};
}

/// Unweighted precision combination of q with a N(prior_mu, prior_var) prior.
template <class T>
EdgeGaussian<T> merge_prior(const EdgeGaussian<T>& q, double prior_mu = 0.0, double prior_var = 1.0) {
  const T prec = 1.0 / q.var + 1.0 / prior_var;
  return {(q.mu / q.var + prior_mu / prior_var) / prec, 1.0 / prec};
}

/// Density product with a Beta(a0, b0) prior.
template <class T>
EdgeBeta<T> merge_prior(const EdgeBeta<T>& q, double a0 = 1.0, double b0 = 1.0) {
  return {q.alpha + (a0 - 1.0), q.beta + (b0 - 1.0)};
}

// ---- samplers -------------------------------------------------------------

template <class T>
T gaussian_reparam(const T& mu, const T& var, const Tensor& noise) {
  return mu + sqrt(var) * noise;
}

/// Relaxed Bernoulli: second coordinate of softmax((log(1-d)+g0, log d+g1)/tau).
template <class T>
T gumbel_softmax(const T& delta, double tau, const Tensor& g0, const Tensor& g1) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be positive");
  return sigmoid((log(delta) - log(1.0 - delta) + (g1 - g0)) / tau);
}

/// Both softmax coordinates (off, on).
inline std::pair<Tensor, Tensor> gumbel_softmax_pair(const Tensor& delta, double tau, const Tensor& g0,
                                                     const Tensor& g1) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be positive");
  const Tensor s = (log(delta) - log(1.0 - delta) + (g1 - g0)) / tau;
  return {sigmoid(-s), sigmoid(s)};
}

/// d I_z(a, b) / d a by Richardson-extrapolated central differences.
inline double incomplete_beta_da(double z, double a, double b) {
  const double h = 1e-3 * std::min(a, 1.0);
  auto d = [&](double step) {
    return (incomplete_beta(z, a + step, b) - incomplete_beta(z, a - step, b)) / (2.0 * step);
  };
  return (4.0 * d(0.5 * h) - d(h)) / 3.0;
}

inline double incomplete_beta_db(double z, double a, double b) {
  // I_z(a, b) = 1 - I_{1-z}(b, a)
  return -incomplete_beta_da(1.0 - z, b, a);
}

/// Implicit-reparameterization gradient (dz/da, dz/db) at a fixed sample.
inline std::pair<double, double> beta_implicit_grad(double z, double a, double b) {
  if (!(z > 0.0 && z < 1.0)) return {0.0, 0.0};
  const double pdf = std::exp(beta_log_pdf(z, a, b));
  if (!(pdf > 1e-300) || !std::isfinite(pdf)) return {0.0, 0.0};
  return {-incomplete_beta_da(z, a, b) / pdf, -incomplete_beta_db(z, a, b) / pdf};
}

/// Beta(a, b) draw via two Gamma variates, combined in log space.
inline double beta_variate(Rng& rng, double a, double b) {
  const double la = log_gamma_variate(rng, a);
  const double lb = log_gamma_variate(rng, b);
  return sigmoid_scalar(la - lb);
}

inline Tensor beta_implicit_sample(const Tensor& alpha, const Tensor& beta, Rng& rng) {
  if (alpha.shape() != beta.shape()) throw ConfigError("beta sample: alpha/beta shape mismatch");
  Tensor z(alpha.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(alpha[i] > 0.0) || !(beta[i] > 0.0)) throw DomainError("beta sample: shapes must be positive");
    z[i] = beta_variate(rng, alpha[i], beta[i]);
  }
  return z;
}

inline Var beta_implicit_sample(const Var& alpha, const Var& beta, Rng& rng) {
  Tensor z = beta_implicit_sample(alpha.value(), beta.value(), rng);
  return alpha.tape->record(z, {alpha, beta}, "beta_sample", [alpha, beta, z](Tape& t, const Tensor& g) {
    const Tensor& a = alpha.value();
    const Tensor& b = beta.value();
    Tensor ga(a.shape());
    Tensor gb(b.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto [da, db] = beta_implicit_grad(z[i], a[i], b[i]);
      ga[i] = g[i] * da;
      gb[i] = g[i] * db;
    }
    t.accumulate(alpha, ga);
    t.accumulate(beta, gb);
  });
}

/// Mode used for point estimates: (a-1)/(a+b-2) when both exceed one, else the mean.
inline Tensor beta_mode(const EdgeBeta<Tensor>& d) {
  return zip_with(d.alpha, d.beta, [](double a, double b) { return (a > 1.0 && b > 1.0) ? (a - 1.0) / (a + b - 2.0) : a / (a + b); });
}

}  // namespace gcvae
