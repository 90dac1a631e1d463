// Library walk-through: lift sqrt(t), solve the consumption problem both
// ways, run the feedback policy and print the numbers next to the closed form.

#include <iostream>

#include "vlift/vlift.hpp"

int main() {
  using namespace vlift;
  const ProblemParams pp;  // a1 = a2 = cbar = xbar = T = 1, sigma0 = 0.2
  const ControlProblem problem = catalog_problem("consumption_sqrt", pp).problem;
  const std::size_t n_steps = 64;
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 1.0 / n_steps, 1.0);
  const auto zeta0 = embed_initial_curve(lift, problem.coeffs.x0, n_steps);

  auto grid = std::make_shared<const BrownianGrid>(
      make_brownian_grid(0.0, 1.0, n_steps, 10000, 2024, Stream::forward));
  VolterraCoefficients driftless = problem.coeffs;
  driftless.control_drift = nullptr;
  const PathEnsemble forward = simulate_lifted(driftless, lift, constant_policy(0.0), grid, zeta0);

  const BasisSpec basis;
  const BsdeSolution lsmc = solve_lsmc(forward, problem, lift, basis);
  const ValueFunction picard = picard_mild_solve(problem, lift, forward, basis);

  auto cl_grid = std::make_shared<const BrownianGrid>(
      make_brownian_grid(0.0, 1.0, n_steps, 10000, 2024, Stream::closed_loop));
  const PathEnsemble cl =
      closed_loop_simulate(problem, lift, feedback_policy(picard, problem, lift), cl_grid, zeta0);
  const CostEstimate J = evaluate_cost(problem, cl);

  std::cout << "closed form      " << consumption_closed_form(pp) << '\n'
            << "lsmc value       " << lsmc.v0 << " +- " << lsmc.std_error << '\n'
            << "picard value     " << picard.w0 << " +- " << picard.std_error << " ("
            << picard.rounds << " rounds)\n"
            << "closed-loop cost " << J.J << " +- " << J.std_error << '\n';
}
