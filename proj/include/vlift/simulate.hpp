#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlift/brownian.hpp"
#include "vlift/errors.hpp"
#include "vlift/lift.hpp"

namespace vlift {

/// beta, sigma and the control drift R of
///   X(t) = x0(t) + int K(t-s)[beta + sigma R] ds + int K(t-s) sigma dW.
/// R is clamped to [-control_bound, control_bound]; an empty R means R = 0.
struct VolterraCoefficients {
  std::function<double(double, double)> beta;
  std::function<double(double, double)> sigma;
  std::function<double(double, double, double)> control_drift;
  std::function<double(double)> x0;
  double control_bound = 10.0;
  std::optional<double> lipschitz_hint;

  double R(double t, double x, double u) const {
    if (!control_drift) return 0.0;
    return std::clamp(control_drift(t, x, u), -control_bound, control_bound);
  }
};

/// Largest |beta(t,x)| / (1 + |x|) on a box: advisory linear-growth probe.
inline double linear_growth_probe(const VolterraCoefficients& c, double T, double x_max,
                                  std::size_t n = 41) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double t = T * i / (n - 1);
      const double x = -x_max + 2.0 * x_max * j / (n - 1);
      worst = std::max(worst, std::abs(c.beta(t, x)) / (1.0 + std::abs(x)));
    }
  return worst;
}

/// What a policy sees at step k. `z` is empty for the direct (non-lifted) scheme.
struct PolicyInput {
  std::size_t step = 0;
  double t = 0.0;
  double x = 0.0;
  std::span<const double> z;
};

using Policy = std::function<double(const PolicyInput&)>;

inline Policy constant_policy(double u) {
  return [u](const PolicyInput&) { return u; };
}

struct SimulationOptions {
  bool store_states = false;    // full Z trajectories (memory n_paths*(N+1)*dim)
  bool record_forward = true;   // <g, E^{N-k} Z_k>
  std::size_t lift_coords = 0;  // leading lift coordinates recorded per step
  double max_flagged_fraction = 1e-3;
};

/// Simulated trajectories under a common Brownian grid.
struct PathEnsemble {
  std::shared_ptr<const BrownianGrid> grid;
  RowMatrix X;         // n_paths x (N+1)
  RowMatrix controls;  // n_paths x N
  RowMatrix forward;   // n_paths x (N+1), lifted only and when recorded
  RowMatrix coords;    // n_paths x ((N+1) * lift_coords)
  std::vector<double> states;  // n_paths * (N+1) * dim when stored
  std::vector<double> sup_norm;  // sup_k ||Z_k||_inf per path (lifted)
  std::vector<unsigned char> flagged;
  std::size_t dim = 0;
  std::size_t lift_coords = 0;
  bool lifted = false;

  std::size_t n_paths() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t n_steps() const { return grid->n_steps; }
  std::size_t flagged_count() const {
    return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));
  }
  bool has_states() const { return !states.empty(); }
  std::span<const double> state(std::size_t path, std::size_t k) const {
    const std::size_t stride = (n_steps() + 1) * dim;
    return std::span<const double>(states).subspan(path * stride + k * dim, dim);
  }
  std::span<const double> coord_row(std::size_t path, std::size_t k) const {
    return std::span<const double>(coords.data() + coords.cols() * path + k * lift_coords,
                                   lift_coords);
  }
  double dW(std::size_t path, std::size_t k) const {
    return grid->increments(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(k));
  }
};

namespace detail {

inline void check_flagged(const PathEnsemble& e, double max_fraction) {
  const std::size_t bad = e.flagged_count();
  if (bad > 0 && static_cast<double>(bad) > max_fraction * static_cast<double>(e.n_paths()))
    throw SimulationError(std::to_string(bad) + " of " + std::to_string(e.n_paths()) +
                          " paths hit non-finite values");
}

inline void check_grid_matches(const DiscreteLift& lift, const BrownianGrid& grid) {
  if (std::abs(lift.dt() - grid.dt()) > 1e-12 * lift.dt())
    throw LiftError("lift dt does not match the Brownian grid dt");
  if (lift.kind() == LiftKind::shift && grid.n_steps > lift.support_cells())
    throw LiftError("grid extends beyond the shift lift horizon");
}

// One exponential-Euler step of the lifted state: z <- E(z + nu * increment).
inline void lifted_update(const DiscreteLift& lift, std::span<double> z, double increment) {
  const auto nu = lift.nu();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += nu[i] * increment;
  lift.step_inplace(z);
}

}  // namespace detail

/// Left-point Euler for the Volterra equation with the kernel given on grid
/// lags (kernel_grid[m] = K(m dt)). O(n_steps^2) per path.
inline PathEnsemble simulate_direct(const VolterraCoefficients& coeffs,
                                    std::span<const double> kernel_grid, const Policy& policy,
                                    std::shared_ptr<const BrownianGrid> grid,
                                    const SimulationOptions& opt = {}) {
  const std::size_t N = grid->n_steps;
  if (kernel_grid.size() < N + 1) throw DimensionError("kernel_grid", N + 1, kernel_grid.size());
  const std::size_t P = grid->n_paths();
  const double dt = grid->dt();
  PathEnsemble e;
  e.grid = grid;
  e.X.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(N + 1));
  e.controls.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(N));
  e.flagged.assign(P, 0);
  std::vector<double> incr(N);
  for (std::size_t p = 0; p < P; ++p) {
    const auto ip = static_cast<Eigen::Index>(p);
    for (std::size_t k = 0; k <= N; ++k) {
      const double t = grid->time(k);
      double x = coeffs.x0(t);
      for (std::size_t j = 0; j < k; ++j) x += kernel_grid[k - j] * incr[j];
      e.X(ip, static_cast<Eigen::Index>(k)) = x;
      if (k == N) break;
      const double u = policy(PolicyInput{k, t, x, {}});
      const double s = coeffs.sigma(t, x);
      incr[k] = (coeffs.beta(t, x) + s * coeffs.R(t, x, u)) * dt +
                s * e.dW(p, k);
      e.controls(ip, static_cast<Eigen::Index>(k)) = u;
      if (!std::isfinite(x) || !std::isfinite(incr[k])) {
        e.flagged[p] = 1;
        for (std::size_t r = k; r <= N; ++r)
          e.X(ip, static_cast<Eigen::Index>(r)) = std::numeric_limits<double>::quiet_NaN();
        break;
      }
    }
  }
  detail::check_flagged(e, opt.max_flagged_fraction);
  return e;
}

/// Exponential-Euler scheme for the lifted equation,
///   Z_{k+1} = E (Z_k + nu [beta + sigma R] dt + nu sigma dW_k),
/// with X_k = <g, Z_k>. O(n_steps * dim) per path.
inline PathEnsemble simulate_lifted(const VolterraCoefficients& coeffs, const DiscreteLift& lift,
                                    const Policy& policy,
                                    std::shared_ptr<const BrownianGrid> grid,
                                    std::span<const double> zeta0,
                                    const SimulationOptions& opt = {}) {
  expect_dim("simulate_lifted: zeta0", lift.dim(), zeta0.size());
  detail::check_grid_matches(lift, *grid);
  const std::size_t N = grid->n_steps;
  const std::size_t P = grid->n_paths();
  const std::size_t d = lift.dim();
  const std::size_t m = std::min(opt.lift_coords, d);
  const double dt = grid->dt();
  PathEnsemble e;
  e.grid = grid;
  e.lifted = true;
  e.dim = d;
  e.lift_coords = m;
  e.X.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(N + 1));
  e.controls.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(N));
  if (opt.record_forward) e.forward.resize(e.X.rows(), e.X.cols());
  if (m > 0) e.coords.resize(e.X.rows(), static_cast<Eigen::Index>((N + 1) * m));
  if (opt.store_states) e.states.resize(P * (N + 1) * d);
  e.sup_norm.assign(P, 0.0);
  e.flagged.assign(P, 0);

  std::vector<double> z(d);
  for (std::size_t p = 0; p < P; ++p) {
    const auto ip = static_cast<Eigen::Index>(p);
    std::copy(zeta0.begin(), zeta0.end(), z.begin());
    double sup = 0.0;
    for (std::size_t k = 0; k <= N; ++k) {
      const auto ik = static_cast<Eigen::Index>(k);
      const double t = grid->time(k);
      const double x = lift.pair(z);
      e.X(ip, ik) = x;
      if (opt.record_forward) e.forward(ip, ik) = lift.forward_pair(z, N - k);
      for (std::size_t c = 0; c < m; ++c) e.coords(ip, static_cast<Eigen::Index>(k * m + c)) = z[c];
      if (opt.store_states) std::copy(z.begin(), z.end(), e.states.begin() + (p * (N + 1) + k) * d);
      for (double v : z) sup = std::max(sup, std::abs(v));
      if (k == N) break;
      const double u = policy(PolicyInput{k, t, x, z});
      const double s = coeffs.sigma(t, x);
      const double incr = (coeffs.beta(t, x) + s * coeffs.R(t, x, u)) * dt + s * e.dW(p, k);
      e.controls(ip, ik) = u;
      if (!std::isfinite(x) || !std::isfinite(incr)) {
        e.flagged[p] = 1;
        for (std::size_t r = k; r <= N; ++r)
          e.X(ip, static_cast<Eigen::Index>(r)) = std::numeric_limits<double>::quiet_NaN();
        break;
      }
      detail::lifted_update(lift, z, incr);
    }
    e.sup_norm[p] = sup;
  }
  detail::check_flagged(e, opt.max_flagged_fraction);
  return e;
}

/// Central difference d/dx f(x) with step 1e-6 (1 + |x|).
inline double fd_derivative(const std::function<double(double)>& f, double x) {
  const double h = 1e-6 * (1.0 + std::abs(x));
  const double d = (f(x + h) - f(x - h)) / (2.0 * h);
  if (!std::isfinite(d)) throw SimulationError("non-finite derivative probe");
  return d;
}

/// A single lifted path with its full state trajectory; the workhorse of the
/// tangent and bump checks.
struct LiftedPath {
  std::vector<double> states;  // (N+1) * dim
  std::vector<double> X;
  std::vector<double> controls;
  std::size_t dim = 0;
  std::span<const double> state(std::size_t k) const {
    return std::span<const double>(states).subspan(k * dim, dim);
  }
};

/// Runs the lifted scheme along `dW` from step `start` with state `z_start`
/// (recorded as step `start`) up to the end of the grid.
inline LiftedPath run_lifted_path(const VolterraCoefficients& coeffs, const DiscreteLift& lift,
                                  const Policy& policy, const BrownianGrid& grid,
                                  std::span<const double> dW, std::span<const double> z_start,
                                  std::size_t start = 0) {
  const std::size_t N = grid.n_steps;
  const std::size_t d = lift.dim();
  expect_dim("run_lifted_path: state", d, z_start.size());
  expect_dim("run_lifted_path: noise", N, dW.size());
  LiftedPath path;
  path.dim = d;
  path.states.assign((N + 1) * d, 0.0);
  path.X.assign(N + 1, 0.0);
  path.controls.assign(N, 0.0);
  std::vector<double> z(z_start.begin(), z_start.end());
  const double dt = grid.dt();
  for (std::size_t k = start; k <= N; ++k) {
    const double t = grid.time(k);
    const double x = lift.pair(z);
    path.X[k] = x;
    std::copy(z.begin(), z.end(), path.states.begin() + k * d);
    if (k == N) break;
    const double u = policy(PolicyInput{k, t, x, z});
    path.controls[k] = u;
    const double s = coeffs.sigma(t, x);
    const double incr = (coeffs.beta(t, x) + s * coeffs.R(t, x, u)) * dt + s * dW[k];
    if (!std::isfinite(incr)) throw SimulationError("non-finite increment on a single path");
    detail::lifted_update(lift, z, incr);
  }
  return path;
}

namespace detail {

// Linearized step along a frozen path: H <- E(H + nu [(b' + (sR)') dt + s' dW] <g,H>).
inline void tangent_update(const VolterraCoefficients& coeffs, const DiscreteLift& lift,
                           double t, double x, double u, double dW, double dt,
                           std::span<double> h) {
  const double a = lift.pair(h);
  const double db = fd_derivative([&](double y) { return coeffs.beta(t, y); }, x);
  const double dsr =
      fd_derivative([&](double y) { return coeffs.sigma(t, y) * coeffs.R(t, y, u); }, x);
  const double ds = fd_derivative([&](double y) { return coeffs.sigma(t, y); }, x);
  detail::lifted_update(lift, h, ((db + dsr) * dt + ds * dW) * a);
}

}  // namespace detail

/// Tangent process H_k = grad_z Z_k h along the frozen noise `dW` of `base`,
/// started from H_start = h. Returns (N + 1 - start) x dim, row r being step
/// start + r.
inline RowMatrix tangent_process(const VolterraCoefficients& coeffs, const DiscreteLift& lift,
                                 const BrownianGrid& grid, std::span<const double> dW,
                                 const LiftedPath& base, std::span<const double> h,
                                 std::size_t start = 0) {
  const std::size_t N = grid.n_steps;
  const std::size_t d = lift.dim();
  expect_dim("tangent_process: direction", d, h.size());
  expect_dim("tangent_process: noise", N, dW.size());
  if (start > N) throw std::out_of_range("tangent_process: start beyond grid");
  RowMatrix out(static_cast<Eigen::Index>(N + 1 - start), static_cast<Eigen::Index>(d));
  std::vector<double> cur(h.begin(), h.end());
  const double dt = grid.dt();
  for (std::size_t k = start; k <= N; ++k) {
    std::copy(cur.begin(), cur.end(), out.row(static_cast<Eigen::Index>(k - start)).data());
    if (k == N) break;
    detail::tangent_update(coeffs, lift, grid.time(k), base.X[k], base.controls[k], dW[k], dt,
                           cur);
  }
  return out;
}

struct MalliavinCheck {
  std::vector<double> bump_derivative;
  std::vector<double> tangent_prediction;
  double rel_error = 0.0;
};

/// Noise-bump derivative of Z_tau with respect to dW_s against the tangent
/// process started right after the bump from E nu sigma(t_s, X_s).
inline MalliavinCheck malliavin_bump_check(const VolterraCoefficients& coeffs,
                                           const DiscreteLift& lift, const BrownianGrid& grid,
                                           std::span<const double> zeta0, std::size_t path_index,
                                           std::size_t s_index, std::size_t tau_index,
                                           const Policy& policy = constant_policy(0.0),
                                           double eps = 1e-5) {
  const std::size_t N = grid.n_steps;
  if (path_index >= grid.n_paths() || s_index >= tau_index || tau_index > N)
    throw std::out_of_range("malliavin_bump_check: need path < n_paths and s < tau <= N");
  const auto row = grid.increments.row(static_cast<Eigen::Index>(path_index));
  std::vector<double> dW(row.data(), row.data() + N);
  const LiftedPath base = run_lifted_path(coeffs, lift, policy, grid, dW, zeta0);
  std::vector<double> bumped_noise = dW;
  bumped_noise[s_index] += eps;
  const LiftedPath bumped =
      run_lifted_path(coeffs, lift, policy, grid, bumped_noise, base.state(s_index), s_index);

  const std::size_t d = lift.dim();
  MalliavinCheck out;
  out.bump_derivative.resize(d);
  const auto z_base = base.state(tau_index);
  const auto z_bump = bumped.state(tau_index);
  for (std::size_t i = 0; i < d; ++i) out.bump_derivative[i] = (z_bump[i] - z_base[i]) / eps;

  std::vector<double> h(lift.nu().begin(), lift.nu().end());
  const double sig = coeffs.sigma(grid.time(s_index), base.X[s_index]);
  for (double& v : h) v *= sig;
  lift.step_inplace(h);
  const RowMatrix tangent = tangent_process(coeffs, lift, grid, dW, base, h, s_index + 1);
  const auto last = tangent.row(static_cast<Eigen::Index>(tau_index - s_index - 1));
  out.tangent_prediction.assign(last.data(), last.data() + d);

  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    diff += std::pow(out.bump_derivative[i] - out.tangent_prediction[i], 2);
    norm += std::pow(out.tangent_prediction[i], 2);
  }
  out.rel_error = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
  return out;
}

struct MomentRow {
  double scale = 0.0;
  double zeta_norm = 0.0;   // ||scale * zeta||_inf
  double moment = 0.0;      // mean over paths of sup_k ||Z_k||_inf^p
  double ratio = 0.0;       // moment / (1 + zeta_norm^p)
};

struct MomentDiagnostic {
  int p = 2;
  std::vector<MomentRow> rows;
  double spread = 0.0;  // max ratio / min ratio
  bool bounded = true;  // false when the ratio grows more than 10x across the sweep
};

/// Empirical check of E[sup ||Z||^p] <= C (1 + ||zeta||^p) over rescaled
/// initial states. Advisory: no constant is asserted.
inline MomentDiagnostic moment_diagnostic(const VolterraCoefficients& coeffs,
                                          const DiscreteLift& lift, const Policy& policy,
                                          std::shared_ptr<const BrownianGrid> grid,
                                          std::span<const double> zeta0, int p,
                                          std::span<const double> zeta_scales) {
  if (p != 2 && p != 4) throw std::invalid_argument("moment_diagnostic: p must be 2 or 4");
  MomentDiagnostic diag;
  diag.p = p;
  SimulationOptions opt;
  opt.record_forward = false;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double scale : zeta_scales) {
    std::vector<double> zeta(zeta0.begin(), zeta0.end());
    double norm = 0.0;
    for (double& v : zeta) {
      v *= scale;
      norm = std::max(norm, std::abs(v));
    }
    const PathEnsemble e = simulate_lifted(coeffs, lift, policy, grid, zeta, opt);
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < e.n_paths(); ++i) {
      if (e.flagged[i]) continue;
      acc += std::pow(e.sup_norm[i], p);
      ++used;
    }
    MomentRow row;
    row.scale = scale;
    row.zeta_norm = norm;
    row.moment = used ? acc / static_cast<double>(used) : std::numeric_limits<double>::infinity();
    row.ratio = row.moment / (1.0 + std::pow(norm, p));
    lo = std::min(lo, row.ratio);
    hi = std::max(hi, row.ratio);
    diag.rows.push_back(row);
  }
  diag.spread = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  diag.bounded = std::isfinite(diag.spread) && diag.rows.back().ratio <= 10.0 * diag.rows.front().ratio;
  return diag;
}

}  // namespace vlift
