#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vlift/control.hpp"
#include "vlift/errors.hpp"
#include "vlift/regression.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

struct BsdeStepDiagnostics {
  double r2_p = 1.0;
  double r2_q = 1.0;
  double condition = 1.0;
  // Mean and standard error of p_{k+1} - p_k + H dt - q dW over paths.
  double residual_mean = 0.0;
  double residual_se = 0.0;
};

/// Regression representation of (p, q): p-hat_k and q-hat_k are basis
/// expansions on the probes of Z_k; step N is the terminal cost.
struct BsdeSolution {
  StepwiseFit p;
  std::vector<Eigen::VectorXd> q_coef;
  std::vector<BsdeStepDiagnostics> diagnostics;
  double t0 = 0.0;
  double T = 1.0;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  double v0 = 0.0;         // p-hat_0 at the initial state
  double std_error = 0.0;  // of v0
  double sup_p2 = 0.0;     // mean over paths of sup_k |p_k|^2
  double q_energy = 0.0;   // mean over paths of sum_k |q_k|^2 dt

  std::size_t n_steps() const { return p.n_steps; }
  double dt() const { return (T - t0) / static_cast<double>(p.n_steps); }
  double q_at(std::size_t k, const Probe& probe) const {
    if (k >= q_coef.size()) throw std::out_of_range("q_at: step outside [0, N)");
    const auto f = features(p.basis, probe);
    double acc = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) acc += q_coef[k](static_cast<Eigen::Index>(j)) * f[j];
    return acc;
  }
};

namespace detail {

inline Eigen::VectorXd predict(const RowMatrix& a, const Eigen::VectorXd& coef) { return a * coef; }

inline void require_clean(const PathEnsemble& e, std::size_t basis_size) {
  if (e.flagged_count() > 0)
    throw RegressionError("ensemble contains flagged paths", 0);
  if (e.n_paths() < 10 * basis_size)
    throw RegressionError("need at least 10 paths per basis term", 0);
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Least-squares Monte Carlo for
///   p_k = E[p_{k+1} | Z_k] + H(t_k, Z_k, q_k) dt,
///   q_k = E[(p_{k+1} - E[p_{k+1} | Z_k]) dW_k | Z_k] / dt,
/// on an uncontrolled lifted ensemble. q is the scalar coupling q . nu.
inline BsdeSolution solve_lsmc(const PathEnsemble& e, const ControlProblem& problem,
                               const DiscreteLift& lift, const BasisSpec& basis,
                               const HamiltonianOptions& ham = {}) {
  validate_basis(basis);
  detail::require_clean(e, basis.size());
  const std::size_t N = e.n_steps();
  const std::size_t P = e.n_paths();
  const double dt = e.grid->dt();
  (void)lift;

  BsdeSolution sol;
  sol.p.basis = basis;
  sol.p.n_steps = N;
  sol.p.terminal = problem.G;
  sol.p.coef.resize(N);
  sol.q_coef.resize(N);
  sol.diagnostics.resize(N);
  sol.t0 = e.grid->t0;
  sol.T = e.grid->T;
  sol.seed = e.grid->seed;
  sol.n_paths = P;

  std::vector<double> pnext(P), pk(P), target(P), pathwise(P), sup_p2(P), q_energy(P, 0.0);
  for (std::size_t i = 0; i < P; ++i) {
    pnext[i] = problem.G(e.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(N)));
    pathwise[i] = pnext[i];
    sup_p2[i] = pnext[i] * pnext[i];
  }
  // Fitted p-hat_{k+1} on the paths, for the one-step residual.
  std::vector<double> pfit_next = pnext;

  for (std::size_t kk = N; kk-- > 0;) {
    const std::size_t k = kk;
    const double t = e.grid->time(k);
    const ProbeTable table = probes_at_step(e, k, basis);
    const RowMatrix a = design_matrix(basis, table);

    const LinearFit m = least_squares(a, pnext, basis.ridge, k);
    const Eigen::VectorXd mhat = detail::predict(a, m.coef);
    for (std::size_t i = 0; i < P; ++i)
      target[i] = (pnext[i] - mhat(static_cast<Eigen::Index>(i))) * e.dW(i, k) / dt;
    const LinearFit q = least_squares(a, target, basis.ridge, k);
    const Eigen::VectorXd qhat = detail::predict(a, q.coef);

    std::vector<double> hdt(P);
    for (std::size_t i = 0; i < P; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double h = hamiltonian_scalar(problem, t, table.x[i], qhat(ii), ham).value;
      hdt[i] = h * dt;
      pk[i] = mhat(ii) + hdt[i];
      if (!(std::abs(pk[i]) <= 1e6)) throw RegressionError("exploding p-hat", k);
      pathwise[i] += hdt[i];
      q_energy[i] += qhat(ii) * qhat(ii) * dt;
    }
    const LinearFit pf = least_squares(a, pk, basis.ridge, k);
    const Eigen::VectorXd pfit = detail::predict(a, pf.coef);

    std::vector<double> resid(P);
    for (std::size_t i = 0; i < P; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      resid[i] = pfit_next[i] - pfit(ii) + hdt[i] - qhat(ii) * e.dW(i, k);
      sup_p2[i] = std::max(sup_p2[i], pfit(ii) * pfit(ii));
    }
    BsdeStepDiagnostics& d = sol.diagnostics[k];
    d.r2_p = m.diag.r2;
    d.r2_q = q.diag.r2;
    d.condition = m.diag.condition;
    double rm = 0.0;
    for (double r : resid) rm += r;
    d.residual_mean = rm / static_cast<double>(P);
    d.residual_se = detail::sample_sd(resid) / std::sqrt(static_cast<double>(P));

    sol.p.coef[k] = pf.coef;
    sol.q_coef[k] = q.coef;
    for (std::size_t i = 0; i < P; ++i) pfit_next[i] = pfit(static_cast<Eigen::Index>(i));
    std::swap(pnext, pk);
  }

  double v = 0.0, s2 = 0.0, qe = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    v += pfit_next[i];
    s2 += sup_p2[i];
    qe += q_energy[i];
  }
  sol.v0 = v / static_cast<double>(P);
  sol.std_error = detail::sample_sd(pathwise) / std::sqrt(static_cast<double>(P));
  sol.sup_p2 = s2 / static_cast<double>(P);
  sol.q_energy = qe / static_cast<double>(P);
  return sol;
}

/// v(t_k, Z) = p-hat_k(Z); the terminal step returns G(<g,Z>).
inline double value_at(const BsdeSolution& sol, const DiscreteLift& lift, std::size_t k,
                       std::span<const double> z) {
  return sol.p.eval_state(lift, k, z);
}

struct IdentificationReport {
  std::size_t samples = 0;
  double median_rel_error = 0.0;
  double p90_rel_error = 0.0;
  std::vector<double> rel_errors;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Compares the regressed coupling q-hat_k with the central difference of
/// p-hat_k along nu times sigma, on interior steps 0.1 N <= k <= 0.9 N.
inline IdentificationReport identification_check(const BsdeSolution& sol, const PathEnsemble& e,
                                                 const DiscreteLift& lift,
                                                 const ControlProblem& problem,
                                                 std::size_t max_paths = 500) {
  const std::size_t N = sol.n_steps();
  const std::size_t m = sol.p.basis.lift_coords;
  const std::size_t k_lo = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(N)));
  const std::size_t k_hi = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(N)));
  const std::size_t paths = std::min(max_paths, e.n_paths());
  IdentificationReport rep;
  for (std::size_t k = std::max<std::size_t>(k_lo, 1); k <= k_hi && k < N; ++k) {
    const Probe dir = probe_direction(lift, lift.nu(), k, N, m);
    const ProbeTable table = probes_at_step(e, k, sol.p.basis);
    for (std::size_t i = 0; i < paths; ++i) {
      const Probe at = table.at(i);
      const double sig = problem.coeffs.sigma(e.grid->time(k), at.x);
      const double grad = sol.p.directional(k, at, dir, fd_step(at)) * sig;
      const double q = sol.q_at(k, at);
      const double scale = std::max(std::abs(grad), std::abs(q));
      rep.rel_errors.push_back(scale > 1e-12 ? std::abs(q - grad) / std::max(std::abs(grad), 1e-12)
                                             : 0.0);
    }
  }
  rep.samples = rep.rel_errors.size();
  rep.median_rel_error = quantile(rep.rel_errors, 0.5);
  rep.p90_rel_error = quantile(rep.rel_errors, 0.9);
  return rep;
}

}  // namespace vlift
