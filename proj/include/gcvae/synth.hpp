#pragma once

// Ground-truth graph generators and trajectory simulators for the five
// synthetic families. Trajectories are [T, p, d] tensors.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gcvae/errors.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

struct TruthSet {
  Tensor common;                 // p x p
  std::vector<Tensor> entities;  // M of p x p
  bool binary = false;
  std::vector<double> strength;  // per-entity forcing (Lorenz96 only)
};

/// Knobs shared by the simulators; noise can be switched off for tests.
struct SimOptions {
  std::size_t burn_in = 200;  // recorded samples discarded before the first kept one
  bool noise = true;
  std::optional<std::vector<double>> x0;  // overrides the random initial state
};

inline double spectral_radius(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ConfigError("spectral_radius: need a square matrix");
  const Eigen::MatrixXd m = as_matrix(a);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace detail {

inline std::size_t nnz(const Tensor& a) {
  return static_cast<std::size_t>(std::count_if(a.data().begin(), a.data().end(), [](double v) { return v != 0.0; }));
}

inline Tensor support(const Tensor& a) {
  return map(a, [](double v) { return v != 0.0 ? 1.0 : 0.0; });
}

inline Tensor scale_to_radius(const Tensor& a, double rho) {
  const double r = spectral_radius(a);
  if (std::abs(r - rho) <= 1e-12) return a;
  return a * (rho / r);
}

template <class F>
Tensor record(std::size_t T_long, std::size_t p, std::size_t d, std::size_t burn_in, F&& step) {
  Tensor out(Shape{T_long, p, d});
  std::vector<double> row(p * d);
  for (std::size_t k = 0; k < burn_in + T_long; ++k) {
    step(row);
    if (k >= burn_in) std::copy(row.begin(), row.end(), out.data().begin() + (k - burn_in) * p * d);
  }
  return out;
}

inline void guard(const Eigen::VectorXd& x, const char* family) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || std::abs(x[i]) > 1e6)
      throw SimulationError(std::string(family) + ": state blew up; try a smaller dt");
}

}  // namespace detail

// ---- integrators ----------------------------------------------------------

/// One classical Runge-Kutta step of dx/dt = f(x).
template <class F>
Eigen::VectorXd rk4_step(const F& f, const Eigen::VectorXd& x, double dt) {
  const Eigen::VectorXd k1 = f(x);
  const Eigen::VectorXd k2 = f(x + 0.5 * dt * k1);
  const Eigen::VectorXd k3 = f(x + 0.5 * dt * k2);
  const Eigen::VectorXd k4 = f(x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class F>
Eigen::VectorXd rk4_integrate(const F& f, Eigen::VectorXd x, double dt, std::size_t steps) {
  for (std::size_t k = 0; k < steps; ++k) x = rk4_step(f, x, dt);
  return x;
}

// ---- linear VAR -----------------------------------------------------------

/// Sparse common transition matrix, then a fixed subset of its support
/// relocated to random off-support positions independently per entity.
/// Every entity matrix and the final common matrix are rescaled to rho.
inline TruthSet gen_linear_var(std::size_t p, std::size_t M, double density, double relocate_frac, double rho,
                               Rng& rng) {
  if (!(density > 0.0 && density < 1.0)) throw ConfigError("linear_var: density must lie in (0,1)");
  if (!(relocate_frac >= 0.0 && relocate_frac < 1.0)) throw ConfigError("linear_var: relocate_frac must lie in [0,1)");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("linear_var: rho must lie in (0,1)");
  if (p < 2 || M < 1) throw ConfigError("linear_var: need p >= 2 and M >= 1");
  std::bernoulli_distribution on(density);
  std::uniform_real_distribution<double> mag(1.0, 2.0);
  std::bernoulli_distribution sign(0.5);
  constexpr int kMaxTries = 1000;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    Tensor a0(Shape{p, p});
    std::vector<std::size_t> supp, off;
    for (std::size_t k = 0; k < p * p; ++k) {
      if (on(rng)) {
        a0[k] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
        supp.push_back(k);
      } else {
        off.push_back(k);
      }
    }
    const std::size_t n_move = static_cast<std::size_t>(std::llround(relocate_frac * static_cast<double>(supp.size())));
    if (supp.empty() || off.size() < n_move || spectral_radius(a0) < 1e-8) continue;
    a0 = detail::scale_to_radius(a0, rho);

    std::vector<std::size_t> moved = supp;
    std::shuffle(moved.begin(), moved.end(), rng);
    moved.resize(n_move);
    std::sort(moved.begin(), moved.end());

    TruthSet ts;
    ts.common = a0;
    for (std::size_t k : moved) ts.common[k] = 0.0;
    bool ok = n_move == 0 || spectral_radius(ts.common) > 1e-8;
    if (ok && n_move > 0) ts.common = detail::scale_to_radius(ts.common, rho);
    for (std::size_t m = 0; ok && m < M; ++m) {
      Tensor am = a0;
      std::vector<std::size_t> dest = off;
      std::shuffle(dest.begin(), dest.end(), rng);
      for (std::size_t k = 0; k < n_move; ++k) {
        am[dest[k]] = a0[moved[k]];
        am[moved[k]] = 0.0;
      }
      if (n_move > 0) {
        if (spectral_radius(am) < 1e-8) {
          ok = false;
          break;
        }
        am = detail::scale_to_radius(am, rho);
      }
      ts.entities.push_back(std::move(am));
    }
    if (ok) return ts;
  }
  throw SimulationError("linear_var: could not draw a non-degenerate transition matrix");
}

/// x_t = A x_{t-1} + eps_t, eps ~ N(0, I). Returns [T, p, 1].
inline Tensor sim_linear_var(const Tensor& A, std::size_t T_long, Rng& rng, const SimOptions& opt = {}) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) throw ConfigError("linear_var: A must be square");
  if (spectral_radius(A) >= 1.0) throw ConfigError("linear_var: spectral radius of A must be below 1");
  const std::size_t p = A.dim(0);
  const Eigen::MatrixXd a = as_matrix(A);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd x(p);
  for (std::size_t i = 0; i < p; ++i) x[i] = opt.x0 ? opt.x0->at(i) : n01(rng);
  bool first = true;
  return detail::record(T_long, p, 1, opt.burn_in, [&](std::vector<double>& row) {
    if (!first) {
      Eigen::VectorXd next = a * x;
      if (opt.noise)
        for (std::size_t i = 0; i < p; ++i) next[i] += n01(rng);
      x = next;
    }
    first = false;
    std::copy(x.data(), x.data() + p, row.begin());
  });
}

// ---- non-linear VAR -------------------------------------------------------

/// Which rows keep their band (1-based row numbering).
enum class FixRule { everything, every_other, every_third, diagonals_corners, first_last };

inline FixRule parse_fix_rule(const std::string& s) {
  if (s == "everything" || s == "S1") return FixRule::everything;
  if (s == "every_other" || s == "S2") return FixRule::every_other;
  if (s == "every_third" || s == "S3") return FixRule::every_third;
  if (s == "diagonals_corners" || s == "S4") return FixRule::diagonals_corners;
  if (s == "first_last" || s == "S5") return FixRule::first_last;
  throw ConfigError("unknown fix_rule '" + s + "'");
}

inline bool row_fixed(FixRule rule, std::size_t row1, std::size_t p) {
  if (row1 == 1 || row1 == p) return true;  // boundary dynamics are tied to their neighbour
  switch (rule) {
    case FixRule::everything: return true;
    case FixRule::every_other: return row1 % 2 == 0;
    case FixRule::every_third: return row1 % 3 == 0;
    case FixRule::diagonals_corners: return row1 == 2 || row1 == p - 1;
    case FixRule::first_last: return false;
  }
  return false;
}

inline TruthSet gen_nonlinear_var(std::size_t p, std::size_t M, FixRule rule, Rng& rng) {
  if (p < 4) throw ConfigError("nonlinear_var: need p >= 4");
  if (M < 1) throw ConfigError("nonlinear_var: need M >= 1");
  Tensor band(Shape{p, p});
  for (std::size_t i = 0; i < p; ++i) {
    band.at({i, i}) = 1.0;
    if (i > 0) band.at({i, i - 1}) = 1.0;
    if (i + 1 < p) band.at({i, i + 1}) = 1.0;
  }
  TruthSet ts;
  for (std::size_t m = 0; m < M; ++m) {
    Tensor z = band;
    for (std::size_t i = 1; i + 1 < p; ++i) {
      if (row_fixed(rule, i + 1, p)) continue;
      z.at({i, i - 1}) = 0.0;
      z.at({i, i + 1}) = 0.0;
      std::vector<std::size_t> cand;
      for (std::size_t j = 0; j < p; ++j)
        if (j + 1 < i || j > i + 1) cand.push_back(j);
      if (cand.size() < 2) {
        cand.clear();
        for (std::size_t j = 0; j < p; ++j)
          if (j != i) cand.push_back(j);
      }
      std::shuffle(cand.begin(), cand.end(), rng);
      z.at({i, cand[0]}) = 1.0;
      z.at({i, cand[1]}) = 1.0;
    }
    ts.entities.push_back(std::move(z));
  }
  ts.common = ts.entities.front();
  for (const auto& z : ts.entities) ts.common = ts.common * z;
  return ts;
}

/// Interior nodes: 0.25 x_i + sin(x_a x_b) + cos(x_a + x_b); boundary nodes:
/// 0.4 x_1 - 0.5 x_2 and its mirror. Noise N(0, 0.25). Returns [T, p, 1].
inline Tensor sim_nonlinear_var(const Tensor& z, std::size_t T_long, Rng& rng, const SimOptions& opt = {}) {
  if (z.rank() != 2 || z.dim(0) != z.dim(1) || z.dim(0) < 4) throw ConfigError("nonlinear_var: z must be p x p, p >= 4");
  const std::size_t p = z.dim(0);
  std::vector<std::pair<std::size_t, std::size_t>> parents(p);
  for (std::size_t i = 1; i + 1 < p; ++i) {
    std::vector<std::size_t> off;
    for (std::size_t j = 0; j < p; ++j)
      if (j != i && z.at({i, j}) != 0.0) off.push_back(j);
    if (z.at({i, i}) == 0.0 || off.size() != 2)
      throw ConfigError("nonlinear_var: row " + std::to_string(i + 1) + " must hold the diagonal and exactly two other parents");
    parents[i] = {off[0], off[1]};
  }
  auto boundary_ok = [&](std::size_t i, std::size_t nb) {
    for (std::size_t j = 0; j < p; ++j)
      if ((z.at({i, j}) != 0.0) != (j == i || j == nb)) return false;
    return true;
  };
  if (!boundary_ok(0, 1) || !boundary_ok(p - 1, p - 2))
    throw ConfigError("nonlinear_var: boundary rows must have parents {1,2} and {p-1,p}");

  std::normal_distribution<double> n01(0.0, 1.0);
  std::normal_distribution<double> eps(0.0, 0.5);
  std::vector<double> x(p), next(p);
  for (std::size_t i = 0; i < p; ++i) x[i] = opt.x0 ? opt.x0->at(i) : n01(rng);
  bool first = true;
  return detail::record(T_long, p, 1, opt.burn_in, [&](std::vector<double>& row) {
    if (!first) {
      next[0] = 0.4 * x[0] - 0.5 * x[1];
      next[p - 1] = 0.4 * x[p - 1] - 0.5 * x[p - 2];
      for (std::size_t i = 1; i + 1 < p; ++i) {
        const double a = x[parents[i].first], b = x[parents[i].second];
        next[i] = 0.25 * x[i] + std::sin(a * b) + std::cos(a + b);
      }
      if (opt.noise)
        for (double& v : next) v += eps(rng);
      x.swap(next);
    }
    first = false;
    std::copy(x.begin(), x.end(), row.begin());
  });
}

// ---- Lotka-Volterra -------------------------------------------------------

struct LVParams {
  double alpha = 1.1;
  double beta_rate = 0.2;
  double gamma = 1.1;
  double delta_rate = 0.2;
  double eta = 200.0;
  double dt = 0.01;
  std::size_t steps_per_sample = 5;
  double obs_noise_sd = 0.1;  // N(0, 0.01)

  void validate() const {
    if (!(alpha > 0 && beta_rate > 0 && gamma > 0 && delta_rate > 0 && eta > 0 && dt > 0) || steps_per_sample < 1)
      throw ConfigError("lotka_volterra: parameters must be positive");
  }
};

/// First p/2 nodes are preys, the rest predators. Blocks of two preys and
/// two predators are coupled internally; each entity adds `extra_edges`
/// symmetric prey/predator pairs across blocks. Self-edges are included.
inline TruthSet gen_lv(std::size_t p, std::size_t M, std::size_t extra_edges, Rng& rng) {
  if (p == 0 || p % 4 != 0) throw ConfigError("lotka_volterra: p must be a positive multiple of 4");
  const std::size_t h = p / 2;
  Tensor c(Shape{p, p});
  for (std::size_t i = 0; i < p; ++i) c.at({i, i}) = 1.0;
  for (std::size_t b = 0; b < p / 4; ++b)
    for (std::size_t i : {2 * b, 2 * b + 1})
      for (std::size_t j : {2 * b, 2 * b + 1}) {
        c.at({i, h + j}) = 1.0;
        c.at({h + j, i}) = 1.0;
      }
  std::vector<std::pair<std::size_t, std::size_t>> cross;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j)
      if (i / 2 != j / 2) cross.emplace_back(i, j);
  if (extra_edges > cross.size()) throw ConfigError("lotka_volterra: too many extra edges for p");
  TruthSet ts;
  ts.common = c;
  for (std::size_t m = 0; m < M; ++m) {
    Tensor z = c;
    std::vector<std::pair<std::size_t, std::size_t>> pick = cross;
    std::shuffle(pick.begin(), pick.end(), rng);
    for (std::size_t k = 0; k < extra_edges; ++k) {
      z.at({pick[k].first, h + pick[k].second}) = 1.0;
      z.at({h + pick[k].second, pick[k].first}) = 1.0;
    }
    ts.entities.push_back(std::move(z));
  }
  return ts;
}

/// Right-hand side of the predator-prey system for graph z.
class LVSystem {
 public:
  LVSystem(const Tensor& z, LVParams prm) : prm_(prm) {
    prm_.validate();
    if (z.rank() != 2 || z.dim(0) != z.dim(1) || z.dim(0) % 2 != 0) throw ConfigError("lotka_volterra: z must be p x p, p even");
    p_ = z.dim(0);
    const std::size_t h = p_ / 2;
    prey_parents_.resize(h);
    pred_parents_.resize(h);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        if (z.at({i, h + j}) != 0.0) prey_parents_[i].push_back(h + j);
        if (z.at({h + j, i}) != 0.0) pred_parents_[j].push_back(i);
      }
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    const std::size_t h = p_ / 2;
    Eigen::VectorXd dx(p_);
    for (std::size_t i = 0; i < h; ++i) {
      double s = 0.0;
      for (std::size_t j : prey_parents_[i]) s += x[j];
      const double u = x[i];
      dx[i] = prm_.alpha * u - prm_.beta_rate * u * s - prm_.alpha * (u / prm_.eta) * (u / prm_.eta);
    }
    for (std::size_t j = 0; j < h; ++j) {
      double s = 0.0;
      for (std::size_t i : pred_parents_[j]) s += x[i];
      const double v = x[h + j];
      dx[h + j] = prm_.delta_rate * v * s - prm_.gamma * v;
    }
    return dx;
  }

  std::size_t p() const { return p_; }

 private:
  LVParams prm_;
  std::size_t p_ = 0;
  std::vector<std::vector<std::size_t>> prey_parents_, pred_parents_;
};

/// RK4 at params.dt, one recorded sample every steps_per_sample steps, plus
/// additive observation noise. Initial populations Unif(10, 20). [T, p, 1].
inline Tensor sim_lv(const Tensor& z, const LVParams& prm, std::size_t T_long, Rng& rng, const SimOptions& opt = {}) {
  const LVSystem f(z, prm);
  const std::size_t p = f.p();
  std::uniform_real_distribution<double> init(10.0, 20.0);
  std::normal_distribution<double> obs(0.0, prm.obs_noise_sd);
  Eigen::VectorXd x(p);
  for (std::size_t i = 0; i < p; ++i) x[i] = opt.x0 ? opt.x0->at(i) : init(rng);
  bool first = true;
  return detail::record(T_long, p, 1, opt.burn_in, [&](std::vector<double>& row) {
    if (!first) {
      x = rk4_integrate(f, x, prm.dt, prm.steps_per_sample);
      detail::guard(x, "lotka_volterra");
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::max(x[i], 0.0);
    }
    first = false;
    for (std::size_t i = 0; i < p; ++i) row[i] = x[i] + (opt.noise ? obs(rng) : 0.0);
  });
}

/// Canonical form dx_i/dt = r_i x_i (1 + sum_j A_ij x_j) of the system above.
inline std::pair<Tensor, std::vector<double>> lv_canonical(const Tensor& z, const LVParams& prm) {
  const std::size_t p = z.dim(0), h = p / 2;
  Tensor A(Shape{p, p});
  std::vector<double> r(p);
  for (std::size_t i = 0; i < h; ++i) {
    r[i] = prm.alpha;
    A.at({i, i}) = -1.0 / (prm.eta * prm.eta);
    for (std::size_t j = 0; j < h; ++j)
      if (z.at({i, h + j}) != 0.0) A.at({i, h + j}) = -prm.beta_rate / prm.alpha;
  }
  for (std::size_t j = 0; j < h; ++j) {
    r[h + j] = -prm.gamma;
    for (std::size_t i = 0; i < h; ++i)
      if (z.at({h + j, i}) != 0.0) A.at({h + j, i}) = -prm.delta_rate / prm.gamma;
  }
  return {A, r};
}

struct LVValidation {
  bool invertible = false;
  std::vector<double> fixed_point;  // -A^{-1} r, empty when A is singular
  double spectral_radius = 0.0;
  bool stable = false;              // every eigenvalue of A below 1 in magnitude
};

inline LVValidation validate_lv(const Tensor& A, const std::vector<double>& r) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) throw ConfigError("validate_lv: A must be square");
  if (r.size() != A.dim(0)) throw ConfigError("validate_lv: r must have length p");
  const Eigen::MatrixXd a = as_matrix(A);
  LVValidation out;
  out.spectral_radius = spectral_radius(A);
  out.stable = out.spectral_radius < 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  lu.setThreshold(1e-12);
  out.invertible = lu.isInvertible();
  if (out.invertible) {
    const Eigen::VectorXd x = -lu.solve(Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())));
    out.fixed_point.assign(x.data(), x.data() + x.size());
  }
  return out;
}

// ---- Lorenz96 -------------------------------------------------------------

inline Eigen::VectorXd lorenz96_derivative(const Eigen::VectorXd& x, double F) {
  const Eigen::Index p = x.size();
  Eigen::VectorXd dx(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const double xp1 = x[(i + 1) % p];
    const double xm1 = x[(i + p - 1) % p];
    const double xm2 = x[(i + p - 2) % p];
    dx[i] = (xp1 - xm2) * xm1 - x[i] + F;
  }
  return dx;
}

struct Lorenz96Params {
  double dt = 0.01;
  std::size_t steps_per_sample = 2;
  double init_sd = 0.1;  // x0 = F + N(0, 0.01)
};

inline Tensor sim_lorenz96(std::size_t p, double F, std::size_t T_long, Rng& rng, const Lorenz96Params& prm = {},
                           const SimOptions& opt = {}) {
  if (p < 4) throw ConfigError("lorenz96: need p >= 4");
  if (!(prm.dt > 0.0) || prm.steps_per_sample < 1) throw ConfigError("lorenz96: dt and steps must be positive");
  std::normal_distribution<double> init(0.0, prm.init_sd);
  Eigen::VectorXd x(p);
  for (std::size_t i = 0; i < p; ++i) x[i] = opt.x0 ? opt.x0->at(i) : F + init(rng);
  const auto f = [F](const Eigen::VectorXd& s) { return lorenz96_derivative(s, F); };
  bool first = true;
  return detail::record(T_long, p, 1, opt.burn_in, [&](std::vector<double>& row) {
    if (!first) {
      x = rk4_integrate(f, x, prm.dt, prm.steps_per_sample);
      detail::guard(x, "lorenz96");
    }
    first = false;
    std::copy(x.data(), x.data() + p, row.begin());
  });
}

inline const std::vector<double>& lorenz96_forcings() {
  static const std::vector<double> fs{10.0, 17.5, 25.0, 32.5, 40.0};
  return fs;
}

/// Cyclic skeleton {i-2, i-1, i, i+1}; identical across entities, F cycles
/// through the standard forcing list.
inline TruthSet gen_lorenz96(std::size_t p, std::size_t M) {
  if (p < 4) throw ConfigError("lorenz96: need p >= 4");
  Tensor z(Shape{p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t off : {p - 2, p - 1, std::size_t{0}, std::size_t{1}}) z.at({i, (i + off) % p}) = 1.0;
  TruthSet ts;
  ts.common = z;
  for (std::size_t m = 0; m < M; ++m) {
    ts.entities.push_back(z);
    ts.strength.push_back(lorenz96_forcings()[m % lorenz96_forcings().size()]);
  }
  return ts;
}

// ---- springs --------------------------------------------------------------

struct SpringsParams {
  double k = 1.0;
  double dt = 0.001;
  std::size_t steps_per_sample = 100;
  double box = 1.0;       // initial positions Unif(-box, box)^2
  double vel_norm = 0.5;  // initial speed of every particle

  void validate() const {
    if (!(k > 0.0) || !(dt > 0.0) || steps_per_sample < 1) throw ConfigError("springs: k, dt and steps must be positive");
  }
};

inline TruthSet gen_springs(std::size_t p, std::size_t M, Rng& rng) {
  if (p < 2) throw ConfigError("springs: need p >= 2");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  TruthSet ts;
  ts.binary = true;
  ts.common = Tensor(Shape{p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) ts.common.at({i, j}) = ts.common.at({j, i}) = u01(rng);
  for (std::size_t m = 0; m < M; ++m) {
    Tensor z(Shape{p, p});
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i + 1; j < p; ++j) z.at({i, j}) = z.at({j, i}) = u01(rng) < ts.common.at({i, j}) ? 1.0 : 0.0;
    ts.entities.push_back(std::move(z));
  }
  return ts;
}

/// Particle state: positions r and velocities v, both p x 2.
struct SpringsState {
  Eigen::MatrixX2d r;
  Eigen::MatrixX2d v;
};

inline void check_symmetric(const Tensor& z) {
  if (z.rank() != 2 || z.dim(0) != z.dim(1)) throw ConfigError("springs: z must be square");
  for (std::size_t i = 0; i < z.dim(0); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (z.at({i, j}) != z.at({j, i})) throw ConfigError("springs: z must be symmetric");
}

inline Eigen::MatrixX2d springs_force(const Eigen::MatrixXd& z, const Eigen::MatrixX2d& r, double k) {
  // F_i = -k sum_j z_ij (r_i - r_j) = -k (deg_i r_i - (z r)_i)
  const Eigen::VectorXd deg = z.rowwise().sum();
  return -k * (deg.asDiagonal() * r - z * r);
}

/// Kick-drift-kick leapfrog.
inline void leapfrog_step(const Eigen::MatrixXd& z, SpringsState& s, double k, double dt) {
  s.v += 0.5 * dt * springs_force(z, s.r, k);
  s.r += dt * s.v;
  s.v += 0.5 * dt * springs_force(z, s.r, k);
}

inline double springs_energy(const Eigen::MatrixXd& z, const SpringsState& s, double k) {
  double e = 0.5 * s.v.squaredNorm();
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < z.cols(); ++j) e += 0.5 * k * z(i, j) * (s.r.row(i) - s.r.row(j)).squaredNorm();
  return e;
}

inline SpringsState springs_initial(std::size_t p, const SpringsParams& prm, Rng& rng) {
  std::uniform_real_distribution<double> pos(-prm.box, prm.box);
  std::normal_distribution<double> n01(0.0, 1.0);
  SpringsState s{Eigen::MatrixX2d(p, 2), Eigen::MatrixX2d(p, 2)};
  for (std::size_t i = 0; i < p; ++i) {
    s.r(i, 0) = pos(rng);
    s.r(i, 1) = pos(rng);
    Eigen::Vector2d v(n01(rng), n01(rng));
    s.v.row(i) = (prm.vel_norm / v.norm()) * v.transpose();
  }
  return s;
}

/// Features per node: (vx, vy, rx, ry). Returns [T, p, 4]; no burn-in.
inline Tensor sim_springs(const Tensor& z, const SpringsParams& prm, std::size_t T_long, Rng& rng) {
  prm.validate();
  check_symmetric(z);
  const std::size_t p = z.dim(0);
  const Eigen::MatrixXd zm = as_matrix(z);
  SpringsState s = springs_initial(p, prm, rng);
  bool first = true;
  return detail::record(T_long, p, 4, 0, [&](std::vector<double>& row) {
    if (!first) {
      for (std::size_t k = 0; k < prm.steps_per_sample; ++k) leapfrog_step(zm, s, prm.k, prm.dt);
      if (!s.r.allFinite() || s.r.cwiseAbs().maxCoeff() > 1e6) throw SimulationError("springs: state blew up; try a smaller dt");
    }
    first = false;
    for (std::size_t i = 0; i < p; ++i) {
      row[i * 4 + 0] = s.v(i, 0);
      row[i * 4 + 1] = s.v(i, 1);
      row[i * 4 + 2] = s.r(i, 0);
      row[i * 4 + 3] = s.r(i, 1);
    }
  });
}

}  // namespace gcvae
