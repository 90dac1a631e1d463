#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlift/errors.hpp"
#include "vlift/kernel.hpp"
#include "vlift/lift.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

/// phi(u) = f2 u^2 + f1 u + f0 + coupling (r1 u + r0) at a fixed (t, x).
/// Problems that supply this let the Hamiltonian use the closed form.
struct QuadraticAffine {
  double f2 = 0.0, f1 = 0.0, f0 = 0.0;
  double r1 = 0.0, r0 = 0.0;
};

/// Stochastic control problem for the controlled Volterra equation.
///
/// The control drift R and its clamp K_R live in `coeffs` (control_drift,
/// control_bound) so that simulation and cost evaluation share one source.
struct ControlProblem {
  std::string name;
  VolterraCoefficients coeffs;
  std::function<double(double, double, double)> F;  // running cost (t, x, u)
  std::function<double(double)> G;                   // terminal cost
  double u_lo = 0.0;
  double u_hi = 1.0;
  double T = 1.0;
  std::optional<double> a1, a2;
  std::function<QuadraticAffine(double, double)> quadratic;

  double K_R() const { return coeffs.control_bound; }
  double R(double t, double x, double u) const { return coeffs.R(t, x, u); }
};

inline void validate_problem(const ControlProblem& p) {
  if (!std::isfinite(p.u_lo) || !std::isfinite(p.u_hi))
    throw ControlError("control set must be a bounded interval");
  if (p.u_lo > p.u_hi) throw ControlError("control set is empty (u_lo > u_hi)");
  if (!p.F || !p.G) throw ControlError("problem '" + p.name + "' needs F and G");
  if (!p.coeffs.beta || !p.coeffs.sigma || !p.coeffs.x0)
    throw ControlError("problem '" + p.name + "' needs beta, sigma and x0");
  if (!(p.coeffs.control_bound > 0.0)) throw ControlError("K_R must be positive");
}

struct LiftedCosts {
  std::function<double(double, std::span<const double>, double)> F;
  std::function<double(std::span<const double>)> G;
};

/// F^g(t, Z, u) = F(t, <g,Z>, u), G^g(Z) = G(<g,Z>).
inline LiftedCosts lift_cost(const ControlProblem& problem, const DiscreteLift& lift) {
  LiftedCosts out;
  out.F = [F = problem.F, lift](double t, std::span<const double> z, double u) {
    return F(t, lift.pair(z), u);
  };
  out.G = [G = problem.G, lift](std::span<const double> z) { return G(lift.pair(z)); };
  return out;
}

struct HamiltonianResult {
  double value = 0.0;
  std::vector<double> argmin_set;  // ascending
  double selected = 0.0;
};

struct HamiltonianOptions {
  bool force_scan = false;
  std::size_t scan_points = 257;
  double u_tol = 1e-8;
  double value_tol = 1e-9;
};

namespace detail {

inline double phi(const ControlProblem& p, double t, double x, double coupling, double u) {
  const double v = p.F(t, x, u) + coupling * p.R(t, x, u);
  if (!std::isfinite(v)) throw ControlError("non-finite Hamiltonian integrand");
  return v;
}

// Closed form is valid only when the clamp on R is inactive over U.
inline bool closed_form_applies(const ControlProblem& p, const QuadraticAffine& q) {
  const double bound = p.K_R();
  return std::abs(q.r1 * p.u_lo + q.r0) <= bound && std::abs(q.r1 * p.u_hi + q.r0) <= bound;
}

inline void finish(HamiltonianResult& res, const HamiltonianOptions& opt) {
  std::sort(res.argmin_set.begin(), res.argmin_set.end());
  std::vector<double> unique;
  for (double u : res.argmin_set)
    if (unique.empty() || u - unique.back() > opt.u_tol) unique.push_back(u);
  res.argmin_set = std::move(unique);
  if (res.argmin_set.empty()) throw ControlError("empty argmin set");
  res.selected = res.argmin_set.front();
}

}  // namespace detail

/// inf over U of F(t,x,u) + coupling R(t,x,u), with the coupling already the
/// scalar xi . nu.
inline HamiltonianResult hamiltonian_scalar(const ControlProblem& p, double t, double x,
                                            double coupling, const HamiltonianOptions& opt = {}) {
  if (!std::isfinite(coupling)) throw ControlError("non-finite costate coupling");
  const double lo = p.u_lo, hi = p.u_hi;
  HamiltonianResult res;
  if (p.quadratic && !opt.force_scan) {
    const QuadraticAffine q = p.quadratic(t, x);
    if (detail::closed_form_applies(p, q)) {
      const double a = q.f2;
      const double b = q.f1 + coupling * q.r1;
      const double c = q.f0 + coupling * q.r0;
      auto value = [&](double u) { return (a * u + b) * u + c; };
      std::vector<double> cand{lo, hi};
      if (a > 0.0) {
        const double v = -b / (2.0 * a);
        if (v > lo && v < hi) cand.push_back(v);
      }
      if (a == 0.0 && b == 0.0) cand = {lo, hi};  // flat: every u is a minimizer
      res.value = std::numeric_limits<double>::infinity();
      for (double u : cand) res.value = std::min(res.value, value(u));
      if (!std::isfinite(res.value)) throw ControlError("non-finite Hamiltonian value");
      const double tol = opt.value_tol * (1.0 + std::abs(res.value));
      for (double u : cand)
        if (value(u) <= res.value + tol) res.argmin_set.push_back(u);
      detail::finish(res, opt);
      return res;
    }
  }

  const std::size_t n = std::max<std::size_t>(opt.scan_points, 2);
  std::vector<double> us(n), vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    us[i] = lo == hi ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
    vals[i] = detail::phi(p, t, x, coupling, us[i]);
  }
  // Golden-section refinement around every discrete local minimum.
  std::vector<std::pair<double, double>> refined;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool left_ok = i == 0 || vals[i] <= vals[i - 1];
    const bool right_ok = i + 1 == n || vals[i] <= vals[i + 1];
    if (!left_ok || !right_ok) continue;
    double a = us[i == 0 ? 0 : i - 1], b = us[i + 1 == n ? n - 1 : i + 1];
    double c = b - invphi * (b - a), d = a + invphi * (b - a);
    double fc = detail::phi(p, t, x, coupling, c), fd = detail::phi(p, t, x, coupling, d);
    while (b - a > opt.u_tol) {
      if (fc <= fd) {
        b = d, d = c, fd = fc;
        c = b - invphi * (b - a);
        fc = detail::phi(p, t, x, coupling, c);
      } else {
        a = c, c = d, fc = fd;
        d = a + invphi * (b - a);
        fd = detail::phi(p, t, x, coupling, d);
      }
    }
    const double u = 0.5 * (a + b);
    refined.emplace_back(u, detail::phi(p, t, x, coupling, u));
    refined.emplace_back(us[i], vals[i]);
  }
  res.value = std::numeric_limits<double>::infinity();
  for (const auto& [u, v] : refined) res.value = std::min(res.value, v);
  const double tol = opt.value_tol * (1.0 + std::abs(res.value));
  for (std::size_t i = 0; i < n; ++i)
    if (vals[i] <= res.value + tol) res.argmin_set.push_back(us[i]);
  for (const auto& [u, v] : refined)
    if (v <= res.value + tol) res.argmin_set.push_back(u);
  detail::finish(res, opt);
  return res;
}

/// H(t, Z, xi) for a costate xi in lift coordinates; the coupling is xi . nu.
inline HamiltonianResult hamiltonian(const ControlProblem& p, const DiscreteLift& lift, double t,
                                     std::span<const double> z, std::span<const double> xi,
                                     const HamiltonianOptions& opt = {}) {
  expect_dim("hamiltonian: state", lift.dim(), z.size());
  expect_dim("hamiltonian: costate", lift.dim(), xi.size());
  double coupling = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) coupling += xi[i] * lift.nu()[i];
  return hamiltonian_scalar(p, t, lift.pair(z), coupling, opt);
}

/// Smallest minimizer.
inline double gamma_select(const HamiltonianResult& h) {
  if (h.argmin_set.empty()) throw ControlError("gamma_select: empty argmin set");
  return *std::min_element(h.argmin_set.begin(), h.argmin_set.end());
}

struct CostEstimate {
  double J = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
};

/// Left-point Riemann running cost plus terminal cost, averaged over the
/// unflagged paths of an ensemble simulated under the policy being scored.
inline CostEstimate evaluate_cost(const ControlProblem& problem, const PathEnsemble& e) {
  const std::size_t N = e.n_steps();
  const double dt = e.grid->dt();
  std::vector<double> costs;
  costs.reserve(e.n_paths());
  for (std::size_t p = 0; p < e.n_paths(); ++p) {
    if (e.flagged[p]) continue;
    const auto ip = static_cast<Eigen::Index>(p);
    double cost = problem.G(e.X(ip, static_cast<Eigen::Index>(N)));
    for (std::size_t k = 0; k < N; ++k) {
      const auto ik = static_cast<Eigen::Index>(k);
      cost += problem.F(e.grid->time(k), e.X(ip, ik), e.controls(ip, ik)) * dt;
    }
    costs.push_back(cost);
  }
  CostEstimate out;
  const std::size_t n = costs.size();
  out.n_paths = n;
  if (n == 0) return out;
  double sum = 0.0;
  for (double c : costs) sum += c;
  out.J = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double c : costs) ss += (c - out.J) * (c - out.J);
    out.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return out;
}

/// Parameters of the built-in problems. Unused fields are ignored.
struct ProblemParams {
  double a1 = 1.0;
  double a2 = 1.0;
  double cbar = 1.0;
  double sigma0 = 0.2;
  double sigma_amp = 0.0;  // sigma(x) = sigma0 (1 + sigma_amp sin x)
  double xbar = 1.0;
  double T = 1.0;
  double eps = 0.5;  // laplace kernel 1/(t + eps)
  double K_R = 10.0;
  std::optional<double> u_lo, u_hi;
};

/// Optimal consumption: dX = ... + sigma(x) R dt with R = -c, running reward
/// F = -a1 c^2, terminal G = a2 x, c in [0, cbar].
inline ControlProblem consumption_problem(const ProblemParams& pp, std::string name) {
  ControlProblem p;
  p.name = std::move(name);
  const double s0 = pp.sigma0, amp = pp.sigma_amp, xbar = pp.xbar;
  p.coeffs.beta = [](double, double) { return 0.0; };
  p.coeffs.sigma = [s0, amp](double, double x) { return s0 * (1.0 + amp * std::sin(x)); };
  p.coeffs.control_drift = [](double, double, double c) { return -c; };
  p.coeffs.x0 = [xbar](double) { return xbar; };
  p.coeffs.control_bound = pp.K_R;
  p.coeffs.lipschitz_hint = 0.0;
  const double a1 = pp.a1, a2 = pp.a2;
  p.F = [a1](double, double, double c) { return -a1 * c * c; };
  p.G = [a2](double x) { return a2 * x; };
  p.u_lo = pp.u_lo.value_or(0.0);
  p.u_hi = pp.u_hi.value_or(pp.cbar);
  p.T = pp.T;
  p.a1 = a1;
  p.a2 = a2;
  p.quadratic = [a1](double, double) {
    QuadraticAffine q;
    q.f2 = -a1;
    q.r1 = -1.0;
    return q;
  };
  return p;
}

/// Interior-minimum test problem: F = u^2, R = u, G = x^2/2, U = [-1, 1].
inline ControlProblem lq_smooth_problem(const ProblemParams& pp) {
  ControlProblem p;
  p.name = "lq_smooth";
  const double s0 = pp.sigma0, amp = pp.sigma_amp, xbar = pp.xbar;
  p.coeffs.beta = [](double, double) { return 0.0; };
  p.coeffs.sigma = [s0, amp](double, double x) { return s0 * (1.0 + amp * std::sin(x)); };
  p.coeffs.control_drift = [](double, double, double u) { return u; };
  p.coeffs.x0 = [xbar](double) { return xbar; };
  p.coeffs.control_bound = pp.K_R;
  p.F = [](double, double, double u) { return u * u; };
  p.G = [](double x) { return 0.5 * x * x; };
  p.u_lo = pp.u_lo.value_or(-1.0);
  p.u_hi = pp.u_hi.value_or(1.0);
  p.T = pp.T;
  p.quadratic = [](double, double) {
    QuadraticAffine q;
    q.f2 = 1.0;
    q.r1 = 1.0;
    return q;
  };
  return p;
}

struct CatalogEntry {
  ControlProblem problem;
  KernelSpec kernel;
};

inline const std::vector<std::string>& catalog_problem_names() {
  static const std::vector<std::string> names{"consumption_sqrt", "consumption_laplace",
                                              "lq_smooth"};
  return names;
}

/// Default parameters per built-in problem; callers override fields.
inline ProblemParams catalog_defaults(const std::string& name) {
  ProblemParams pp;
  if (name == "lq_smooth") pp.sigma0 = 0.3;
  if (name != "consumption_sqrt" && name != "consumption_laplace" && name != "lq_smooth")
    throw ConfigError("unknown problem: " + name);
  return pp;
}

inline CatalogEntry catalog_problem(const std::string& name, const ProblemParams& pp) {
  CatalogEntry e;
  if (name == "consumption_sqrt") {
    e.problem = consumption_problem(pp, name);
    e.kernel = {"sqrt", 0.0};
  } else if (name == "consumption_laplace") {
    e.problem = consumption_problem(pp, name);
    e.kernel = {"laplace", pp.eps};
  } else if (name == "lq_smooth") {
    e.problem = lq_smooth_problem(pp);
    e.kernel = {"sqrt", 0.0};
  } else {
    throw ConfigError("unknown problem: " + name);
  }
  validate_problem(e.problem);
  return e;
}

/// Closed-form optimal value of the consumption problem on the sqrt kernel
/// with constant sigma: c = cbar everywhere, so
///   J* = -a1 cbar^2 T + a2 xbar - a2 sigma0 cbar (2/3) T^{3/2}.
inline double consumption_closed_form(const ProblemParams& pp) {
  return -pp.a1 * pp.cbar * pp.cbar * pp.T + pp.a2 * pp.xbar -
         pp.a2 * pp.sigma0 * pp.cbar * (2.0 / 3.0) * std::pow(pp.T, 1.5);
}

}  // namespace vlift
