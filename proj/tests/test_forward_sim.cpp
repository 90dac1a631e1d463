#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "vlift/brownian.hpp"
#include "vlift/lift.hpp"
#include "vlift/simulate.hpp"

using namespace vlift;

namespace {

VolterraCoefficients state_dependent(double amp) {
  VolterraCoefficients c;
  c.beta = [](double, double x) { return 0.1 * std::cos(x); };
  c.sigma = [amp](double, double x) { return 0.2 * (1.0 + amp * std::sin(x)); };
  c.control_drift = [](double, double, double u) { return u; };
  c.x0 = [](double) { return 1.0; };
  return c;
}

// Left-point convolution sum written out independently of the library.
std::vector<double> convolution_oracle(const VolterraCoefficients& c, double (*K)(double),
                                       const std::vector<double>& dW, double dt, double u) {
  const std::size_t N = dW.size();
  std::vector<double> x(N + 1), drift(N), vol(N);
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = k * dt;
    double acc = c.x0(t);
    for (std::size_t j = 0; j < k; ++j) {
      const double w = K((k - j) * dt);
      acc += w * (drift[j] * dt + vol[j] * dW[j]);
    }
    x[k] = acc;
    if (k < N) {
      vol[k] = c.sigma(t, acc);
      drift[k] = c.beta(t, acc) + vol[k] * c.R(t, acc, u);
    }
  }
  return x;
}

double sqrt_fn(double t) { return std::sqrt(t); }

}  // namespace

TEST(Brownian, SameSeedSameIncrements) {
  const auto a = make_brownian_grid(0.0, 1.0, 16, 8, 42);
  const auto b = make_brownian_grid(0.0, 1.0, 16, 8, 42);
  EXPECT_TRUE(a.increments == b.increments);
  const auto c = make_brownian_grid(0.0, 1.0, 16, 8, 42, Stream::closed_loop);
  EXPECT_FALSE(a.increments == c.increments);
  // Path p does not depend on how many paths were drawn.
  const auto d = make_brownian_grid(0.0, 1.0, 16, 3, 42);
  EXPECT_TRUE(d.increments == a.increments.topRows(3));
}

TEST(Brownian, IncrementVariance) {
  const auto g = make_brownian_grid(0.0, 2.0, 8, 20000, 5);
  const double dt = 0.25;
  double s2 = 0.0, m = 0.0;
  for (Eigen::Index i = 0; i < g.increments.size(); ++i) {
    m += g.increments.data()[i];
    s2 += g.increments.data()[i] * g.increments.data()[i];
  }
  const double n = static_cast<double>(g.increments.size());
  EXPECT_NEAR(m / n, 0.0, 4.0 * std::sqrt(dt / n));
  EXPECT_NEAR(s2 / n, dt, 4.0 * dt * std::sqrt(2.0 / n));
  EXPECT_DOUBLE_EQ(g.time(8), 2.0);
  EXPECT_THROW(make_brownian_grid(0.0, 1.0, 0, 1, 1), std::invalid_argument);
}

TEST(Coefficients, ControlDriftIsClamped) {
  VolterraCoefficients c = state_dependent(0.0);
  c.control_bound = 2.0;
  EXPECT_DOUBLE_EQ(c.R(0.0, 0.0, 5.0), 2.0);
  EXPECT_DOUBLE_EQ(c.R(0.0, 0.0, -5.0), -2.0);
  c.control_drift = nullptr;
  EXPECT_DOUBLE_EQ(c.R(0.0, 0.0, 5.0), 0.0);
  EXPECT_NEAR(linear_growth_probe(state_dependent(0.3), 1.0, 10.0), 0.1, 1e-12);
}

TEST(Simulate, ShiftLiftMatchesConvolutionOracle) {
  const double dt = 1.0 / 64;
  const auto c = state_dependent(0.3);
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), dt, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 64, 10, 11));
  const auto zeta = embed_initial_curve(lift, c.x0, 64);
  const auto e = simulate_lifted(c, lift, constant_policy(0.4), grid, zeta);
  for (std::size_t p = 0; p < 10; ++p) {
    std::vector<double> dW(64);
    for (std::size_t k = 0; k < 64; ++k) dW[k] = e.dW(p, k);
    const auto x = convolution_oracle(c, sqrt_fn, dW, dt, 0.4);
    for (std::size_t k = 0; k <= 64; ++k)
      EXPECT_NEAR(e.X(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)), x[k], 1e-11);
  }
}

TEST(Simulate, DirectAndLiftedAgreeForLaplaceLift) {
  const double dt = 1.0 / 32;
  const auto c = state_dependent(0.3);
  LaplaceLiftOptions lo;
  lo.dt = dt;
  const DiscreteLift lift =
      build_laplace_lift(laplace_kernel(0.5), default_laplace_quadrature(0.5, 32), lo);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 32, 20, 3));
  const auto zeta = embed_initial_curve(lift, c.x0, 32);
  const auto lifted = simulate_lifted(c, lift, constant_policy(0.0), grid, zeta);
  const auto kg = kernel_grid(lift, 32);
  // Free term of the direct scheme: <g, E^k zeta>.
  std::vector<double> free_term(33);
  std::vector<double> z(zeta.begin(), zeta.end());
  for (std::size_t k = 0; k <= 32; ++k) {
    free_term[k] = lift.pair(z);
    lift.step_inplace(z);
  }
  VolterraCoefficients cd = c;
  cd.x0 = [&](double t) { return free_term[static_cast<std::size_t>(std::lround(t / dt))]; };
  const auto direct = simulate_direct(cd, kg, constant_policy(0.0), grid);
  EXPECT_LE((lifted.X - direct.X).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Simulate, GaussianMomentsForConstantCoefficients) {
  // beta = 0, sigma = 1, K = sqrt: Var X_T = sum_{m=1}^N m dt * dt.
  VolterraCoefficients c;
  c.beta = [](double, double) { return 0.0; };
  c.sigma = [](double, double) { return 1.0; };
  c.x0 = [](double) { return 0.0; };
  const std::size_t N = 16;
  const double dt = 1.0 / N;
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), dt, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, N, 40000, 8));
  const auto e = simulate_lifted(c, lift, constant_policy(0.0), grid,
                                 std::vector<double>(lift.dim(), 0.0));
  const Eigen::VectorXd xt = e.X.col(static_cast<Eigen::Index>(N));
  const double mean = xt.mean();
  const double var = (xt.array() - mean).square().mean();
  const double expected = dt * dt * N * (N + 1) / 2.0;
  EXPECT_NEAR(mean, 0.0, 4.0 * std::sqrt(expected / 40000));
  EXPECT_NEAR(var, expected, 4.0 * expected * std::sqrt(2.0 / 40000));
}

TEST(Simulate, ForwardProbeAtTerminalStepIsState) {
  const auto c = state_dependent(0.0);
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 0.125, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 8, 5, 1));
  SimulationOptions opt;
  opt.store_states = true;
  const auto e = simulate_lifted(c, lift, constant_policy(0.0), grid,
                                 embed_initial_curve(lift, c.x0, 8), opt);
  for (std::size_t p = 0; p < 5; ++p) {
    EXPECT_DOUBLE_EQ(e.forward(static_cast<Eigen::Index>(p), 8), e.X(static_cast<Eigen::Index>(p), 8));
    for (std::size_t k = 0; k <= 8; ++k) {
      EXPECT_NEAR(lift.pair(e.state(p, k)), e.X(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)), 1e-14);
      EXPECT_NEAR(lift.forward_pair(e.state(p, k), 8 - k), e.forward(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)), 1e-14);
    }
  }
}

TEST(Simulate, RejectsMismatchedInputs) {
  const auto c = state_dependent(0.0);
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 0.125, 1.0);
  auto wrong = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 16, 2, 1));
  EXPECT_THROW(simulate_lifted(c, lift, constant_policy(0.0), wrong,
                               std::vector<double>(lift.dim(), 0.0)),
               std::exception);
  auto ok = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 8, 2, 1));
  EXPECT_THROW(simulate_lifted(c, lift, constant_policy(0.0), ok, std::vector<double>(3, 0.0)),
               DimensionError);
  EXPECT_THROW(simulate_direct(c, std::vector<double>(4, 0.0), constant_policy(0.0), ok),
               DimensionError);
}

TEST(Simulate, BlowUpIsFlagged) {
  VolterraCoefficients c;
  c.beta = [](double, double x) { return std::exp(x * x); };
  c.sigma = [](double, double) { return 0.0; };
  c.x0 = [](double) { return 5.0; };
  const DiscreteLift lift = build_shift_lift(exp_kernel(0.0), 0.125, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 8, 4, 1));
  SimulationOptions opt;
  opt.max_flagged_fraction = 1.0;
  const auto e = simulate_lifted(c, lift, constant_policy(0.0), grid,
                                 embed_initial_curve(lift, c.x0, 8), opt);
  EXPECT_EQ(e.flagged_count(), 4u);
  opt.max_flagged_fraction = 1e-3;
  EXPECT_THROW(simulate_lifted(c, lift, constant_policy(0.0), grid,
                               embed_initial_curve(lift, c.x0, 8), opt),
               SimulationError);
}

TEST(Malliavin, BumpMatchesTangentForSmoothCoefficients) {
  VolterraCoefficients c;
  c.beta = [](double, double x) { return 0.1 * std::cos(x); };
  c.sigma = [](double, double x) { return 1.0 + 0.3 * std::sin(x); };
  c.x0 = [](double) { return 0.5; };
  const std::size_t N = 64;
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 1.0 / N, 1.0);
  const auto grid = make_brownian_grid(0.0, 1.0, N, 4, 9, Stream::verification);
  const auto zeta = embed_initial_curve(lift, c.x0, N);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto chk = malliavin_bump_check(c, lift, grid, zeta, p, 10 + p, 50);
    EXPECT_LT(chk.rel_error, 1e-2) << p;
  }
  EXPECT_THROW(malliavin_bump_check(c, lift, grid, zeta, 0, 20, 20), std::out_of_range);
}

TEST(Malliavin, LinearSystemTangentIsExact) {
  // Constant sigma, zero beta: Z_tau depends on dW_s with slope E^{tau-s} nu sigma.
  VolterraCoefficients c;
  c.beta = [](double, double) { return 0.0; };
  c.sigma = [](double, double) { return 0.7; };
  c.x0 = [](double) { return 0.0; };
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 1.0 / 16, 1.0);
  const auto grid = make_brownian_grid(0.0, 1.0, 16, 1, 2);
  const auto chk =
      malliavin_bump_check(c, lift, grid, std::vector<double>(lift.dim(), 0.0), 0, 3, 9);
  EXPECT_LT(chk.rel_error, 1e-8);
  std::vector<double> expected(lift.nu().begin(), lift.nu().end());
  for (int i = 0; i < 6; ++i) lift.step_inplace(expected);
  for (std::size_t j = 0; j < expected.size(); ++j)
    EXPECT_NEAR(chk.bump_derivative[j], 0.7 * expected[j], 1e-8);
}

TEST(Moments, BoundedRatioForLinearGrowth) {
  const auto c = state_dependent(0.3);
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 1.0 / 32, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 32, 500, 4));
  const std::vector<double> scales{0.5, 1.0, 2.0, 4.0, 8.0};
  const auto zeta = embed_initial_curve(lift, c.x0, 32);
  for (int p : {2, 4}) {
    const auto d = moment_diagnostic(c, lift, constant_policy(0.0), grid, zeta, p, scales);
    EXPECT_EQ(d.rows.size(), scales.size());
    EXPECT_TRUE(d.bounded) << p;
  }
  EXPECT_THROW(moment_diagnostic(c, lift, constant_policy(0.0), grid, zeta, 3, scales),
               std::invalid_argument);
}
