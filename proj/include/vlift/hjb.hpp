#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "vlift/bsde.hpp"
#include "vlift/control.hpp"
#include "vlift/errors.hpp"
#include "vlift/regression.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

/// w(t_k, .) as basis expansions, plus the Picard history.
struct ValueFunction {
  StepwiseFit w;
  std::size_t rounds = 0;
  std::vector<double> deltas;  // sup-norm change per round on the probe subset
  bool converged = false;
  double t0 = 0.0;
  double T = 1.0;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  double w0 = 0.0;
  double std_error = 0.0;

  std::size_t n_steps() const { return w.n_steps; }
  double dt() const { return (T - t0) / static_cast<double>(w.n_steps); }
  double value_at(const DiscreteLift& lift, std::size_t k, std::span<const double> z) const {
    return w.eval_state(lift, k, z);
  }
};

struct PicardOptions {
  std::size_t n_rounds = 8;
  double tol = 1e-4;
  std::size_t probe_paths = 256;
  HamiltonianOptions ham;
};

/// sigma * (directional derivative of w_{k+1} along E nu) at the predicted
/// next-step probe. This is the costate coupling grad w . nu sigma seen one
/// step ahead, where the noise of step k actually lands.
inline double one_step_coupling(const StepwiseFit& w, std::size_t k, const Probe& predicted_next,
                                const Probe& noise_dir, double sigma) {
  if (sigma == 0.0) return 0.0;
  return sigma * w.directional(k + 1, predicted_next, noise_dir, fd_step(predicted_next));
}

namespace detail {

struct StepData {
  ProbeTable probes;
  RowMatrix design;
  Probe noise_dir;  // E nu seen at step k + 1
  std::vector<double> sigma;
};

inline std::vector<StepData> gather_steps(const PathEnsemble& e, const ControlProblem& problem,
                                          const DiscreteLift& lift, const BasisSpec& basis) {
  const std::size_t N = e.n_steps();
  std::vector<StepData> steps(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    steps[k].probes = probes_at_step(e, k, basis);
    if (k == N) break;
    steps[k].design = design_matrix(basis, steps[k].probes);
    steps[k].noise_dir = noise_direction(lift, k, N, basis.lift_coords);
    steps[k].sigma.resize(e.n_paths());
    for (std::size_t i = 0; i < e.n_paths(); ++i)
      steps[k].sigma[i] = problem.coeffs.sigma(e.grid->time(k), steps[k].probes.x[i]);
  }
  return steps;
}

// Probe of E(Z_k + nu beta dt): the realized next probe minus the noise part.
inline Probe predicted_probe(const std::vector<StepData>& steps, std::size_t k, std::size_t i,
                             double noise) {
  return probe_axpy(steps[k + 1].probes.at(i), -noise, steps[k].noise_dir);
}

}  // namespace detail

/// Mild-solution fixed point
///   w(t_k, Z_k) = E[G(X_N) + sum_{j>=k} H(t_j, Z_j, grad w nu sigma) dt | Z_k]
/// by Picard rounds on a shared uncontrolled ensemble, starting from
/// w^(0)(t_k, .) = E[G(X_N) | Z_k].
inline ValueFunction picard_mild_solve(const ControlProblem& problem, const DiscreteLift& lift,
                                       const PathEnsemble& e, const BasisSpec& basis,
                                       const PicardOptions& opt = {}) {
  validate_basis(basis);
  detail::require_clean(e, basis.size());
  const std::size_t N = e.n_steps();
  const std::size_t P = e.n_paths();
  const double dt = e.grid->dt();
  const auto steps = detail::gather_steps(e, problem, lift, basis);

  ValueFunction vf;
  vf.w.basis = basis;
  vf.w.n_steps = N;
  vf.w.terminal = problem.G;
  vf.w.coef.resize(N);
  vf.t0 = e.grid->t0;
  vf.T = e.grid->T;
  vf.seed = e.grid->seed;
  vf.n_paths = P;

  std::vector<double> S(P);
  for (std::size_t i = 0; i < P; ++i)
    S[i] = problem.G(steps[N].probes.x[i]);
  for (std::size_t k = 0; k < N; ++k)
    vf.w.coef[k] = least_squares(steps[k].design, S, basis.ridge, k).coef;

  const std::size_t probes = std::min(opt.probe_paths, P);
  auto probe_values = [&](const StepwiseFit& w) {
    std::vector<double> out;
    out.reserve(N * probes);
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t i = 0; i < probes; ++i) out.push_back(w.eval(k, steps[k].probes.at(i)));
    return out;
  };
  std::vector<double> previous = probe_values(vf.w);
  std::size_t rising = 0;

  for (std::size_t round = 1; round <= opt.n_rounds; ++round) {
    StepwiseFit next = vf.w;
    for (std::size_t i = 0; i < P; ++i) S[i] = problem.G(steps[N].probes.x[i]);
    for (std::size_t kk = N; kk-- > 0;) {
      const std::size_t k = kk;
      const double t = e.grid->time(k);
      for (std::size_t i = 0; i < P; ++i) {
        const double sig = steps[k].sigma[i];
        const Probe ahead = detail::predicted_probe(steps, k, i, sig * e.dW(i, k));
        const double c = one_step_coupling(vf.w, k, ahead, steps[k].noise_dir, sig);
        S[i] += hamiltonian_scalar(problem, t, steps[k].probes.x[i], c, opt.ham).value * dt;
      }
      next.coef[k] = least_squares(steps[k].design, S, basis.ridge, k).coef;
    }
    vf.w = std::move(next);
    vf.rounds = round;

    const std::vector<double> current = probe_values(vf.w);
    double delta = 0.0, size = 0.0;
    for (std::size_t j = 0; j < current.size(); ++j) {
      delta = std::max(delta, std::abs(current[j] - previous[j]));
      size = std::max(size, std::abs(current[j]));
    }
    previous = current;
    if (!vf.deltas.empty() && delta >= vf.deltas.back() && delta > 0.0)
      ++rising;
    else
      rising = 0;
    vf.deltas.push_back(delta);
    if (delta <= opt.tol * (1.0 + size)) {
      vf.converged = true;
      break;
    }
    if (rising >= 3) {
      std::ostringstream msg;
      msg << "Picard deltas failed to decrease for 3 rounds:";
      for (double d : vf.deltas) msg << ' ' << d;
      throw RegressionError(msg.str(), 0);
    }
  }

  vf.w0 = vf.w.eval(0, steps[0].probes.at(0));
  vf.std_error = detail::sample_sd(S) / std::sqrt(static_cast<double>(P));
  return vf;
}

/// Costate coupling used by the feedback law at (t_k, Z): probes of
/// E(Z + nu beta dt) at step k + 1, differentiated along E nu, times sigma.
inline double feedback_coupling(const StepwiseFit& w, const ControlProblem& problem,
                                const DiscreteLift& lift, std::size_t k, double t,
                                std::span<const double> z) {
  const std::size_t N = w.n_steps;
  if (k >= N) throw std::out_of_range("feedback_coupling: step outside [0, N)");
  const double x = lift.pair(z);
  const double sig = problem.coeffs.sigma(t, x);
  if (sig == 0.0) return 0.0;
  std::vector<double> ahead(z.begin(), z.end());
  const double drift = problem.coeffs.beta(t, x) * lift.dt();
  for (std::size_t i = 0; i < ahead.size(); ++i) ahead[i] += lift.nu()[i] * drift;
  lift.step_inplace(ahead);
  const Probe at = probe_state(lift, ahead, k + 1, N, w.basis.lift_coords);
  const Probe dir = noise_direction(lift, k, N, w.basis.lift_coords);
  return one_step_coupling(w, k, at, dir, sig);
}

/// u = Gamma_0(t_k, Z, grad w nu sigma).
inline Policy feedback_policy(const StepwiseFit& w, const ControlProblem& problem,
                              const DiscreteLift& lift, const HamiltonianOptions& ham = {}) {
  auto wp = std::make_shared<const StepwiseFit>(w);
  return [wp, problem, lift, ham](const PolicyInput& in) {
    if (in.z.empty()) throw ControlError("feedback policy needs the lifted state");
    const double c = feedback_coupling(*wp, problem, lift, in.step, in.t, in.z);
    return gamma_select(hamiltonian_scalar(problem, in.t, in.x, c, ham));
  };
}

inline Policy feedback_policy(const ValueFunction& v, const ControlProblem& problem,
                              const DiscreteLift& lift, const HamiltonianOptions& ham = {}) {
  return feedback_policy(v.w, problem, lift, ham);
}

/// The lifted scheme with u_k = policy(t_k, Z_k).
inline PathEnsemble closed_loop_simulate(const ControlProblem& problem, const DiscreteLift& lift,
                                         const Policy& policy,
                                         std::shared_ptr<const BrownianGrid> grid,
                                         std::span<const double> zeta0,
                                         const SimulationOptions& opt = {}) {
  return simulate_lifted(problem.coeffs, lift, policy, std::move(grid), zeta0, opt);
}

struct NamedPolicy {
  std::string name;
  Policy policy;
  bool is_feedback = false;
};

struct VerificationRow {
  std::string name;
  bool is_feedback = false;
  double J = 0.0;
  double J_se = 0.0;
  double combined_se = 0.0;
  double gap = 0.0;  // J - v
  bool ok = true;
};

struct VerificationReport {
  double v = 0.0;
  double v_se = 0.0;
  std::vector<VerificationRow> rows;
  bool all_ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const VerificationRow& r) { return r.ok; });
  }
};

/// J(policy) >= v - 3 combined SE for every policy; |J - v| within the same
/// band for the feedback policy. All policies share the Brownian grid.
inline VerificationReport verify_value_inequality(const ControlProblem& problem,
                                                  const DiscreteLift& lift, double v, double v_se,
                                                  const std::vector<NamedPolicy>& policies,
                                                  std::shared_ptr<const BrownianGrid> grid,
                                                  std::span<const double> zeta0) {
  VerificationReport rep;
  rep.v = v;
  rep.v_se = v_se;
  SimulationOptions opt;
  opt.record_forward = false;
  for (const auto& np : policies) {
    const PathEnsemble e = closed_loop_simulate(problem, lift, np.policy, grid, zeta0, opt);
    const CostEstimate c = evaluate_cost(problem, e);
    VerificationRow row;
    row.name = np.name;
    row.is_feedback = np.is_feedback;
    row.J = c.J;
    row.J_se = c.std_error;
    row.combined_se = std::sqrt(c.std_error * c.std_error + v_se * v_se);
    row.gap = c.J - v;
    row.ok = np.is_feedback ? std::abs(row.gap) <= 3.0 * row.combined_se
                            : row.gap >= -3.0 * row.combined_se;
    rep.rows.push_back(row);
  }
  return rep;
}

struct ResidualReport {
  std::size_t samples = 0;
  double median_abs = 0.0;
  double p90_abs = 0.0;
  double terminal_max_abs = 0.0;  // |w(T, .) - G| on the ensemble
};

/// Finite-difference residual of
///   d_t w + L_t w + H(t, z, grad w nu sigma) = 0
/// on the uncontrolled ensemble: the transport part is one semigroup step
/// (w_{k+1}(E(Z + nu beta dt)) - w_k(Z)) / dt, the diffusion part is
/// 1/2 sigma^2 times the second derivative along E nu.
inline ResidualReport generator_residual(const StepwiseFit& w, const ControlProblem& problem,
                                         const DiscreteLift& lift, const PathEnsemble& e,
                                         std::size_t max_paths = 500,
                                         const HamiltonianOptions& ham = {}) {
  const std::size_t N = w.n_steps;
  const double dt = e.grid->dt();
  const auto steps = detail::gather_steps(e, problem, lift, w.basis);
  const std::size_t paths = std::min(max_paths, e.n_paths());
  const std::size_t k_lo = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(N)));
  const std::size_t k_hi = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(N)));
  std::vector<double> res;
  for (std::size_t k = std::max<std::size_t>(k_lo, 1); k <= k_hi && k < N; ++k) {
    const double t = e.grid->time(k);
    for (std::size_t i = 0; i < paths; ++i) {
      const Probe now = steps[k].probes.at(i);
      const double sig = steps[k].sigma[i];
      const double b = problem.coeffs.beta(t, now.x);
      // Probe of E Z: strip both drift and noise from the realized next step.
      const Probe transported =
          detail::predicted_probe(steps, k, i, b * dt + sig * e.dW(i, k));
      const Probe& dir = steps[k].noise_dir;
      const double h = fd_step(transported);
      const double d1 = w.directional(k + 1, transported, dir, h);
      const double d2 = w.second_directional(k + 1, transported, dir, h);
      const double dt_term = (w.eval(k + 1, transported) - w.eval(k, now)) / dt;
      const double hval = hamiltonian_scalar(problem, t, now.x, sig * d1, ham).value;
      res.push_back(std::abs(dt_term + b * d1 + 0.5 * sig * sig * d2 + hval));
    }
  }
  ResidualReport rep;
  rep.samples = res.size();
  rep.median_abs = quantile(res, 0.5);
  rep.p90_abs = quantile(res, 0.9);
  for (std::size_t i = 0; i < e.n_paths(); ++i) {
    const double x = steps[N].probes.x[i];
    Probe p;
    p.x = x;
    p.y = x;
    p.coords.assign(w.basis.lift_coords, 0.0);
    rep.terminal_max_abs = std::max(rep.terminal_max_abs, std::abs(w.eval(N, p) - problem.G(x)));
  }
  return rep;
}

}  // namespace vlift
