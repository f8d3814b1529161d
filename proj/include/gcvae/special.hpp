#pragma once

// log-gamma, digamma, trigamma and the regularized incomplete beta function,
// with Tensor and Var overloads for the first two.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "gcvae/autodiff.hpp"
#include "gcvae/errors.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("log_gamma: argument must be positive, got " + std::to_string(x));
  return std::lgamma(x);
}

inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma: argument must be positive, got " + std::to_string(x));
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r2 * (1.0 / 12 - r2 * (1.0 / 120 - r2 * (1.0 / 252 - r2 * (1.0 / 240 - r2 * (1.0 / 132)))));
  return acc + std::log(x) - 0.5 * r - series;
}

inline double trigamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("trigamma: argument must be positive, got " + std::to_string(x));
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  // 1/x + 1/2x^2 + sum B_2k / x^(2k+1)
  const double series = r * (1.0 + r * (0.5 + r * (1.0 / 6 - r2 * (1.0 / 30 - r2 * (1.0 / 42 - r2 * (1.0 / 30))))));
  return acc + series;
}

namespace detail {

// Continued fraction for I_x(a,b), modified Lentz.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b), i.e. the Beta(a, b) CDF at x.
inline double incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete_beta: shapes must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta: x must lie in [0,1], got " + std::to_string(x));
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double lfront = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(lfront) * detail::betacf(a, b, x) / a;
  return 1.0 - std::exp(lfront) * detail::betacf(b, a, 1.0 - x) / b;
}

inline double beta_log_pdf(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

inline Tensor log_gamma(const Tensor& a) { return map(a, [](double v) { return log_gamma(v); }); }
inline Tensor digamma(const Tensor& a) { return map(a, [](double v) { return digamma(v); }); }

inline Var log_gamma(const Var& a) {
  return a.tape->record(log_gamma(a.value()), {a}, "log_gamma", [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g * digamma(a.value()));
  });
}

inline Var digamma(const Var& a) {
  return a.tape->record(digamma(a.value()), {a}, "digamma", [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g * map(a.value(), [](double v) { return trigamma(v); }));
  });
}

}  // namespace gcvae
