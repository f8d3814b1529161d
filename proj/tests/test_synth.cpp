#include <gtest/gtest.h>

#include <cmath>

#include "gcvae/synth.hpp"

using namespace gcvae;

namespace {

// Gelfand: rho(A) = lim ||A^k||^(1/k); an oracle independent of the eigensolver.
double gelfand_radius(const Tensor& a) {
  Eigen::MatrixXd m = as_matrix(a);
  Eigen::MatrixXd pw = m;
  double log_norm = 0.0;
  constexpr int kSquarings = 16;  // A^(2^16)
  for (int s = 0; s < kSquarings; ++s) {
    const double n = pw.norm();
    if (n == 0.0) return 0.0;
    pw /= n;
    log_norm = 2.0 * (log_norm + std::log(n));
    pw = pw * pw;
  }
  log_norm += std::log(pw.norm());
  return std::exp(log_norm / std::pow(2.0, kSquarings));
}

std::size_t row_nnz(const Tensor& z, std::size_t i) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < z.dim(1); ++j) n += z.at({i, j}) != 0.0;
  return n;
}

}  // namespace

TEST(LinearVar, RadiusEqualsRho) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed);
    const TruthSet ts = gen_linear_var(10, 4, 0.3, 0.25, 0.5, rng);
    EXPECT_NEAR(spectral_radius(ts.common), 0.5, 1e-9);
    for (const auto& a : ts.entities) EXPECT_NEAR(spectral_radius(a), 0.5, 1e-9);
  }
}

TEST(LinearVar, NoRelocationGivesIdenticalEntities) {
  Rng rng = make_rng(1);
  const TruthSet ts = gen_linear_var(8, 3, 0.3, 0.0, 0.5, rng);
  for (const auto& a : ts.entities) EXPECT_EQ(a, ts.common);
}

TEST(LinearVar, RelocatedEntriesLeaveCommonButStayInEntities) {
  Rng rng = make_rng(2);
  const TruthSet ts = gen_linear_var(10, 5, 0.3, 0.3, 0.5, rng);
  const Tensor sc = detail::support(ts.common);
  for (const auto& a : ts.entities) {
    const Tensor sa = detail::support(a);
    EXPECT_EQ(detail::nnz(a), detail::nnz(ts.entities.front()));
    std::size_t lost = 0;
    for (std::size_t k = 0; k < sc.size(); ++k) {
      EXPECT_FALSE(sc[k] == 1.0 && sa[k] == 0.0) << "common support must survive in every entity";
      lost += sa[k] == 1.0 && sc[k] == 0.0;
    }
    // relocated count = entity nnz - common nnz
    EXPECT_EQ(lost, detail::nnz(a) - detail::nnz(ts.common));
    EXPECT_GT(lost, 0u);
  }
}

TEST(LinearVar, ReproducibleFromSeed) {
  Rng a = make_rng(9), b = make_rng(9);
  const TruthSet x = gen_linear_var(10, 3, 0.2, 0.1, 0.5, a);
  const TruthSet y = gen_linear_var(10, 3, 0.2, 0.1, 0.5, b);
  EXPECT_EQ(x.common, y.common);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(x.entities[m], y.entities[m]);
}

TEST(LinearVar, GelfandOracleAgrees) {
  Rng rng = make_rng(3);
  for (int k = 0; k < 20; ++k) {
    const Tensor a = normal_tensor(rng, {6, 6}, 0.0, 0.3);
    EXPECT_NEAR(spectral_radius(a), gelfand_radius(a), 1e-3 * std::max(1.0, spectral_radius(a)));
  }
}

TEST(SimLinearVar, NoiselessCases) {
  Rng rng = make_rng(4);
  SimOptions opt;
  opt.burn_in = 0;
  opt.noise = false;
  opt.x0 = std::vector<double>{1.0, 1.0, 1.0};
  const Tensor zero = sim_linear_var(Tensor({3, 3}), 5, rng, opt);
  for (std::size_t t = 1; t < 5; ++t)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(zero.at({t, i, 0}), 0.0);
  Tensor half({3, 3});
  for (std::size_t i = 0; i < 3; ++i) half.at({i, i}) = 0.5;
  const Tensor x = sim_linear_var(half, 6, rng, opt);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.at({t, i, 0}), std::pow(0.5, static_cast<double>(t)));
}

TEST(SimLinearVar, WhiteNoiseVariance) {
  Rng rng = make_rng(5);
  const Tensor x = sim_linear_var(Tensor({4, 4}), 20000, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < 20000; ++t) {
      s += x.at({t, i, 0});
      s2 += x.at({t, i, 0}) * x.at({t, i, 0});
    }
    const double var = s2 / 20000 - std::pow(s / 20000, 2);
    EXPECT_NEAR(var, 1.0, 0.05);
  }
}

TEST(SimLinearVar, UnstableRejected) {
  Rng rng = make_rng(6);
  Tensor a({2, 2});
  a.at({0, 0}) = 1.1;
  EXPECT_THROW(sim_linear_var(a, 10, rng), ConfigError);
}

TEST(NonlinearVar, FixEverythingIsBanded) {
  Rng rng = make_rng(7);
  const TruthSet ts = gen_nonlinear_var(10, 4, FixRule::everything, rng);
  for (const auto& z : ts.entities) EXPECT_EQ(z, ts.common);
  EXPECT_EQ(ts.common.at({4, 3}), 1.0);
  EXPECT_EQ(ts.common.at({4, 5}), 1.0);
}

TEST(NonlinearVar, RowCountsAndZigzag) {
  for (FixRule rule : {FixRule::every_other, FixRule::every_third, FixRule::diagonals_corners, FixRule::first_last}) {
    Rng rng = make_rng(8);
    const std::size_t p = 12;
    const TruthSet ts = gen_nonlinear_var(p, 6, rule, rng);
    for (const auto& z : ts.entities) {
      EXPECT_EQ(row_nnz(z, 0), 2u);
      EXPECT_EQ(row_nnz(z, p - 1), 2u);
      for (std::size_t i = 1; i + 1 < p; ++i) {
        EXPECT_EQ(row_nnz(z, i), 3u);
        EXPECT_EQ(z.at({i, i}), 1.0);
        if (!row_fixed(rule, i + 1, p)) {
          EXPECT_EQ(z.at({i, i - 1}), 0.0);
          EXPECT_EQ(z.at({i, i + 1}), 0.0);
        }
      }
    }
    // Common: preserved rows keep their band, perturbed rows lose it.
    for (std::size_t i = 1; i + 1 < p; ++i)
      EXPECT_EQ(ts.common.at({i, i + 1}) == 1.0, row_fixed(rule, i + 1, p)) << "row " << i + 1;
  }
}

TEST(SimNonlinearVar, Substitution) {
  Rng rng = make_rng(9);
  const TruthSet ts = gen_nonlinear_var(6, 1, FixRule::everything, rng);
  SimOptions opt;
  opt.burn_in = 0;
  opt.noise = false;
  opt.x0 = std::vector<double>(6, 0.0);
  const Tensor x = sim_nonlinear_var(ts.common, 2, rng, opt);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_DOUBLE_EQ(x.at({1, i, 0}), 1.0);
  opt.x0 = std::vector<double>(6, 1.0);
  const Tensor y = sim_nonlinear_var(ts.common, 2, rng, opt);
  EXPECT_NEAR(y.at({1, 0, 0}), -0.1, 1e-15);
  EXPECT_NEAR(y.at({1, 5, 0}), -0.1, 1e-15);
}

TEST(SimNonlinearVar, BoundedLongRun) {
  Rng rng = make_rng(10);
  const TruthSet ts = gen_nonlinear_var(10, 1, FixRule::every_third, rng);
  const Tensor x = sim_nonlinear_var(ts.entities[0], 10000, rng);
  EXPECT_LT(max_abs(x), 10.0);
}

TEST(SimNonlinearVar, MalformedParentsRejected) {
  Rng rng = make_rng(11);
  Tensor z({5, 5});
  for (std::size_t i = 0; i < 5; ++i) z.at({i, i}) = 1.0;
  EXPECT_THROW(sim_nonlinear_var(z, 10, rng), ConfigError);
}

TEST(LotkaVolterra, BlocksAndSymmetricExtras) {
  Rng rng = make_rng(12);
  const TruthSet ts = gen_lv(20, 4, 3, rng);
  const std::size_t h = 10;
  std::size_t cross = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) cross += ts.common.at({i, h + j}) != 0.0;
  EXPECT_EQ(cross, 5u * 4u);  // 5 blocks, 2 preys x 2 predators
  for (const auto& z : ts.entities) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) EXPECT_EQ(z.at({i, h + j}), z.at({h + j, i}));
    EXPECT_EQ(detail::nnz(z), detail::nnz(ts.common) + 6);
  }
  Rng r2 = make_rng(12);
  const TruthSet none = gen_lv(20, 2, 0, r2);
  for (const auto& z : none.entities) EXPECT_EQ(z, none.common);
  EXPECT_THROW(gen_lv(10, 2, 0, r2), ConfigError);
}

TEST(LotkaVolterra, FixedPoints) {
  const Tensor z = gen_lorenz96(4, 1).common * 0.0;  // no coupling at all
  LVParams prm;
  const LVSystem f(z, prm);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  EXPECT_EQ(f(x).norm(), 0.0);
  // decoupled prey: alpha u - alpha (u/eta)^2 = 0 at u = eta^2
  x[0] = prm.eta * prm.eta;
  EXPECT_NEAR(f(x)[0], 0.0, 1e-9);
}

TEST(LotkaVolterra, PositiveBoundedTrajectory) {
  Rng rng = make_rng(13);
  const TruthSet ts = gen_lv(8, 2, 1, rng);
  const Tensor x = sim_lv(ts.entities[0], LVParams{}, 2000, rng);
  EXPECT_TRUE(x.all_finite());
  SimOptions quiet;
  quiet.noise = false;
  const Tensor y = sim_lv(ts.entities[1], LVParams{}, 2000, rng, quiet);
  for (double v : y.data()) EXPECT_GE(v, 0.0);
}

TEST(ValidateLv, Examples) {
  Tensor neg_i({3, 3});
  for (std::size_t i = 0; i < 3; ++i) neg_i.at({i, i}) = -1.0;
  const LVValidation v = validate_lv(neg_i, {1.0, 1.0, 1.0});
  ASSERT_TRUE(v.invertible);
  for (double x : v.fixed_point) EXPECT_DOUBLE_EQ(x, 1.0);
  EXPECT_FALSE(v.stable);  // |-1| is not below 1

  const LVValidation s = validate_lv(Tensor({3, 3}), {1.0, 1.0, 1.0});
  EXPECT_FALSE(s.invertible);
  EXPECT_TRUE(s.fixed_point.empty());

  Tensor small({2, 2}, {0.3, 0.1, -0.2, 0.4});
  EXPECT_TRUE(validate_lv(small, {1.0, 1.0}).stable);
}

TEST(ValidateLv, StabilityMatchesGelfandOracle) {
  Rng rng = make_rng(14);
  int agree = 0;
  for (int k = 0; k < 100; ++k) {
    const TruthSet ts = gen_lv(8, 1, k % 5, rng);
    LVParams prm;
    std::uniform_real_distribution<double> u(0.05, 2.0);
    prm.beta_rate = u(rng);
    prm.delta_rate = u(rng);
    const auto [A, r] = lv_canonical(ts.entities[0], prm);
    agree += validate_lv(A, r).stable == (gelfand_radius(A) < 1.0);
  }
  EXPECT_EQ(agree, 100);
}

TEST(Rk4, ExpDecayAndOrder) {
  const auto f = [](const Eigen::VectorXd& u) -> Eigen::VectorXd { return -u; };
  Eigen::VectorXd u0(1);
  u0[0] = 1.0;
  EXPECT_NEAR(rk4_integrate(f, u0, 0.01, 100)[0], std::exp(-1.0), 1e-9);
  const double e1 = std::abs(rk4_integrate(f, u0, 0.1, 10)[0] - std::exp(-1.0));
  const double e2 = std::abs(rk4_integrate(f, u0, 0.05, 20)[0] - std::exp(-1.0));
  EXPECT_NEAR(e1 / e2, 16.0, 2.0);
}

TEST(Rk4, HarmonicOscillatorOrder) {
  const auto f = [](const Eigen::VectorXd& s) -> Eigen::VectorXd {
    Eigen::VectorXd d(2);
    d << s[1], -s[0];
    return d;
  };
  Eigen::VectorXd s0(2);
  s0 << 1.0, 0.0;
  auto err = [&](double dt, std::size_t n) {
    const Eigen::VectorXd s = rk4_integrate(f, s0, dt, n);
    return std::hypot(s[0] - std::cos(2.0), s[1] + std::sin(2.0));
  };
  EXPECT_NEAR(err(0.1, 20) / err(0.05, 40), 16.0, 2.0);
}

TEST(Lorenz96, FixedPointAndSkeleton) {
  const double F = 8.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(10, F);
  EXPECT_LT(lorenz96_derivative(x, F).norm(), 1e-12);
  const TruthSet ts = gen_lorenz96(6, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(row_nnz(ts.common, i), 4u);
    for (std::size_t off : {4u, 5u, 0u, 1u}) EXPECT_EQ(ts.common.at({i, (i + off) % 6}), 1.0);
  }
  EXPECT_EQ(ts.strength, (std::vector<double>{10.0, 17.5, 25.0}));
  EXPECT_THROW(gen_lorenz96(3, 1), ConfigError);
}

TEST(Lorenz96, BoundedAtF10) {
  Rng rng = make_rng(15);
  const Tensor x = sim_lorenz96(10, 10.0, 10000, rng);
  EXPECT_LT(max_abs(x), 30.0);
}

TEST(Springs, GraphStructure) {
  Rng rng = make_rng(16);
  const TruthSet ts = gen_springs(5, 20, rng);
  EXPECT_TRUE(ts.binary);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(ts.common.at({i, i}), 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(ts.common.at({i, j}), 0.0);
      EXPECT_LE(ts.common.at({i, j}), 1.0);
      EXPECT_EQ(ts.common.at({i, j}), ts.common.at({j, i}));
    }
  }
  for (const auto& z : ts.entities) {
    EXPECT_NO_THROW(check_symmetric(z));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(z.at({i, i}), 0.0);
    for (double v : z.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(Springs, EdgeFrequencyMatchesCommon) {
  Rng rng = make_rng(17);
  const TruthSet ts = gen_springs(4, 10000, rng);
  Tensor freq({4, 4});
  for (const auto& z : ts.entities) freq = freq + z;
  freq = freq / 10000.0;
  EXPECT_LT(max_abs(freq - ts.common), 0.02);
}

TEST(Springs, FreeMotionIsLinear) {
  Rng rng = make_rng(18);
  SpringsParams prm;
  const Tensor x = sim_springs(Tensor({3, 3}), prm, 5, rng);
  const double span = prm.dt * static_cast<double>(prm.steps_per_sample);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_NEAR(x.at({t, i, 2 + c}), x.at({0, i, 2 + c}) + x.at({0, i, c}) * span * static_cast<double>(t), 1e-12);
}

TEST(Springs, MomentumAndEnergy) {
  Rng rng = make_rng(19);
  SpringsParams prm;
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 3);
  z(0, 1) = z(1, 0) = 1.0;
  z(1, 2) = z(2, 1) = 1.0;
  SpringsState s = springs_initial(3, prm, rng);
  const double e0 = springs_energy(z, s, prm.k);
  double worst_dp = 0.0, worst_de = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const Eigen::RowVector2d before = s.v.colwise().sum();
    leapfrog_step(z, s, prm.k, prm.dt);
    worst_dp = std::max(worst_dp, (s.v.colwise().sum() - before).norm());
    worst_de = std::max(worst_de, std::abs(springs_energy(z, s, prm.k) - e0) / e0);
  }
  EXPECT_LT(worst_dp, 1e-10);
  EXPECT_LT(worst_de, 1e-3);
}

TEST(Springs, AsymmetricRejected) {
  Rng rng = make_rng(20);
  Tensor z({2, 2});
  z.at({0, 1}) = 1.0;
  EXPECT_THROW(sim_springs(z, SpringsParams{}, 3, rng), ConfigError);
}
