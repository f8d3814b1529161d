#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "gcvae/tensor.hpp"

namespace gcvae {

using Rng = std::mt19937_64;

/// Independent stream for (master seed, entity, replicate).
inline Rng make_rng(std::uint64_t seed, std::uint64_t entity = 0, std::uint64_t replicate = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(entity), static_cast<std::uint32_t>(replicate)};
  return Rng(seq);
}

inline Tensor normal_tensor(Rng& rng, Shape shape, double mean = 0.0, double sd = 1.0) {
  Tensor out(std::move(shape));
  std::normal_distribution<double> dist(mean, sd);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor out(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

/// Standard Gumbel draws, -log(-log U).
inline Tensor gumbel_tensor(Rng& rng, Shape shape) {
  Tensor out(std::move(shape));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (double& v : out.data()) {
    double u = dist(rng);
    while (u <= 0.0) u = dist(rng);
    v = -std::log(-std::log(u));
  }
  return out;
}

/// log of a Gamma(shape, 1) draw. Shapes below one use the boost
/// g(a) = g(a+1) U^(1/a) in log space so tiny shapes do not underflow.
inline double log_gamma_variate(Rng& rng, double shape) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    double v = g(rng);
    while (v <= 0.0) v = g(rng);
    return std::log(v);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  return log_gamma_variate(rng, shape + 1.0) + std::log(u) / shape;
}

}  // namespace gcvae
