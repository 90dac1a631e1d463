#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "vlift/bsde.hpp"
#include "vlift/hjb.hpp"

using namespace vlift;

namespace {

struct Fixture {
  ControlProblem problem;
  DiscreteLift lift;
  std::vector<double> zeta;
  PathEnsemble ensemble;
};

Fixture make_fixture(const std::string& name, std::size_t N, std::size_t paths,
                     std::uint64_t seed) {
  const auto entry = catalog_problem(name, catalog_defaults(name));
  Fixture f{entry.problem, build_shift_lift(sqrt_kernel(1.0), 1.0 / N, 1.0), {}, {}};
  f.zeta = embed_initial_curve(f.lift, f.problem.coeffs.x0, N);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, N, paths, seed));
  VolterraCoefficients c = f.problem.coeffs;
  c.control_drift = nullptr;
  f.ensemble = simulate_lifted(c, f.lift, constant_policy(0.0), grid, f.zeta);
  return f;
}

}  // namespace

TEST(Picard, ConsumptionConvergesToClosedForm) {
  const Fixture f = make_fixture("consumption_sqrt", 32, 4000, 12);
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{});
  EXPECT_TRUE(v.converged);
  EXPECT_GE(v.rounds, 1u);
  EXPECT_EQ(v.deltas.size(), v.rounds);
  const ProblemParams pp = catalog_defaults("consumption_sqrt");
  EXPECT_NEAR(v.w0, consumption_closed_form(pp),
              3.0 * v.std_error + pp.sigma0 * pp.cbar * std::sqrt(1.0 / 32));
  EXPECT_NEAR(v.value_at(f.lift, 0, f.zeta), v.w0, 1e-9);
}

TEST(Picard, AgreesWithLsmcOnSmoothProblem) {
  const Fixture f = make_fixture("lq_smooth", 32, 4000, 19);
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{});
  const BsdeSolution s = solve_lsmc(f.ensemble, f.problem, f.lift, BasisSpec{});
  const double se = std::hypot(v.std_error, s.std_error);
  EXPECT_NEAR(v.w0, s.v0, 2.0 * se + 1e-3);
}

TEST(Picard, ZeroRoundsKeepsTerminalFit) {
  const Fixture f = make_fixture("consumption_sqrt", 16, 1000, 3);
  PicardOptions opt;
  opt.n_rounds = 0;
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{}, opt);
  // w0 = E[G(X_N)] = a2 xbar for the uncontrolled martingale.
  EXPECT_EQ(v.rounds, 0u);
  EXPECT_NEAR(v.w0, 1.0, 4.0 * 0.2 / std::sqrt(1000.0));
}

TEST(Feedback, ConsumptionConsumesAtTheCap) {
  const Fixture f = make_fixture("consumption_sqrt", 32, 2000, 5);
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{});
  const Policy pol = feedback_policy(v, f.problem, f.lift);
  auto grid = std::make_shared<const BrownianGrid>(
      make_brownian_grid(0.0, 1.0, 32, 200, 5, Stream::closed_loop));
  const PathEnsemble cl = closed_loop_simulate(f.problem, f.lift, pol, grid, f.zeta);
  const double frac = (cl.controls.array() == 1.0).cast<double>().mean();
  EXPECT_GE(frac, 0.99);
  EXPECT_THROW(pol(PolicyInput{0, 0.0, 1.0, {}}), ControlError);
}

TEST(Feedback, CouplingVanishesWithoutNoise) {
  StepwiseFit w;
  w.n_steps = 2;
  w.coef.assign(2, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(w.basis.size())));
  w.terminal = [](double x) { return x; };
  EXPECT_EQ(one_step_coupling(w, 0, Probe{1.0, 1.0, {}}, Probe{1.0, 1.0, {}}, 0.0), 0.0);
  // Linear w_{k+1} = x + y along (1, 2): coupling = sigma * 3.
  w.basis.x_degree = 1;
  w.basis.forward_degree = 1;
  w.basis.cross_term = false;
  w.coef.assign(2, Eigen::Vector3d(0.0, 1.0, 1.0));
  EXPECT_NEAR(one_step_coupling(w, 0, Probe{0.2, 0.4, {}}, Probe{1.0, 2.0, {}}, 0.5), 1.5, 1e-9);
}

TEST(Verification, ConstantPoliciesDoNotBeatTheValue) {
  const Fixture f = make_fixture("consumption_sqrt", 32, 4000, 8);
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{});
  auto grid = std::make_shared<const BrownianGrid>(
      make_brownian_grid(0.0, 1.0, 32, 4000, 8, Stream::verification));
  std::vector<NamedPolicy> pols{{"feedback", feedback_policy(v, f.problem, f.lift), true},
                                {"zero", constant_policy(0.0), false},
                                {"half", constant_policy(0.5), false}};
  const auto rep = verify_value_inequality(f.problem, f.lift, v.w0, v.std_error, pols, grid, f.zeta);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_TRUE(rep.all_ok());
  // Zero consumption forgoes the reward a1 cbar^2 T = 1 minus the drift loss.
  EXPECT_GT(rep.rows[1].gap, 0.5);
}

TEST(Residual, TerminalMatchesAndInteriorFinite) {
  const Fixture f = make_fixture("lq_smooth", 16, 2000, 4);
  const ValueFunction v = picard_mild_solve(f.problem, f.lift, f.ensemble, BasisSpec{});
  const auto r = generator_residual(v.w, f.problem, f.lift, f.ensemble, 200);
  EXPECT_EQ(r.terminal_max_abs, 0.0);
  EXPECT_GT(r.samples, 0u);
  EXPECT_TRUE(std::isfinite(r.median_abs));
  EXPECT_LE(r.median_abs, r.p90_abs);
}
