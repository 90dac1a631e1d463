#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <limits>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "vlift/errors.hpp"
#include "vlift/kernel.hpp"

namespace vlift {

enum class LiftKind { shift, laplace, custom };
enum class Exactness { grid_exact, approximate };

inline const char* to_string(LiftKind kind) {
  switch (kind) {
    case LiftKind::shift: return "shift";
    case LiftKind::laplace: return "laplace";
    case LiftKind::custom: return "custom";
  }
  return "?";
}

/// Continuous liftable decomposition K(t) = <g, S_t* nu>.
///
/// Shift: S_t* is translation to the right by t on L^p(R), g lives on
/// [0, horizon] and nu is the indicator of [-horizon, 0].
/// Laplace: S_t* is multiplication by exp(-t x) on L^q([0, inf)).
struct LiftSpec {
  LiftKind kind = LiftKind::custom;
  std::function<double(double)> g_density;
  std::function<double(double)> nu_density;
  std::string generator_descriptor;
  double horizon = 1.0;
};

inline LiftSpec catalog_lift_spec(const Kernel& kernel) {
  LiftSpec spec;
  spec.horizon = kernel.horizon;
  if (kernel.name == "sqrt") {
    const double h = kernel.horizon;
    spec.kind = LiftKind::shift;
    spec.g_density = [h](double x) { return (x > 0.0 && x <= h) ? 0.5 / std::sqrt(x) : 0.0; };
    spec.nu_density = [h](double x) { return (x >= -h && x <= 0.0) ? 1.0 : 0.0; };
    spec.generator_descriptor = "left translation";
    return spec;
  }
  if (kernel.laplace_density) {
    spec.kind = LiftKind::laplace;
    auto m = kernel.laplace_density;
    spec.g_density = [m](double x) { return std::sqrt(m(x)); };
    spec.nu_density = spec.g_density;
    spec.generator_descriptor = "multiplication by -x";
    return spec;
  }
  throw LiftError("no continuous lift in the catalog for kernel '" + kernel.name + "'");
}

/// <g, S_t* nu> by quadrature: int g(x) nu(x - t) dx over the support for the
/// shift lift, int_0^inf g nu exp(-t x) dx for the Laplace lift.
inline double lift_spec_pairing(const LiftSpec& spec, double t) {
  double err = 0.0;
  if (spec.kind == LiftKind::shift) {
    const double lo = std::max(0.0, t - spec.horizon);
    const double hi = std::min(t, spec.horizon);
    if (hi <= lo) return 0.0;
    boost::math::quadrature::tanh_sinh<double> integrator;
    return integrator.integrate(
        [&](double x) { return spec.g_density(x) * spec.nu_density(x - t); }, lo, hi, 1e-12,
        &err);
  }
  if (spec.kind == LiftKind::laplace) {
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(
        [&](double x) { return spec.g_density(x) * spec.nu_density(x) * std::exp(-t * x); },
        0.0, std::numeric_limits<double>::infinity(), 1e-12, &err);
  }
  throw LiftError("pairing by quadrature needs a shift or laplace lift spec");
}

/// Largest relative deviation |<g,S_t nu> - K(t)| / |K(t)| over `probe_times`.
inline double verify_lift_spec(const LiftSpec& spec, const Kernel& kernel,
                               std::span<const double> probe_times) {
  double worst = 0.0;
  for (double t : probe_times) {
    const double exact = eval_kernel(kernel, t);
    const double lifted = lift_spec_pairing(spec, t);
    worst = std::max(worst, std::abs(lifted - exact) / std::max(std::abs(exact), 1e-300));
  }
  return worst;
}

/// Finite-dimensional surrogate of (g, nu, S_dt*). Immutable after construction.
///
/// Shift lifts use 2n cells covering [-H, H) with cell width dt: cells 0..n-1
/// are the reservoir where nu = 1, cells n..2n-1 carry the per-cell integrals
/// of g. One step moves index i to i+1, drops the last cell and zero-fills
/// index 0, so <g, E^k nu> telescopes to K(k dt).
/// Laplace lifts are diagonal: E = diag(exp(-x_j dt)).
class DiscreteLift {
 public:
  static DiscreteLift shift(double dt, std::vector<double> support_weights) {
    DiscreteLift lift;
    lift.kind_ = LiftKind::shift;
    lift.exactness_ = Exactness::grid_exact;
    lift.dt_ = dt;
    lift.cells_ = support_weights.size();
    const std::size_t n = lift.cells_;
    lift.g_.assign(2 * n, 0.0);
    lift.nu_.assign(2 * n, 0.0);
    std::copy(support_weights.begin(), support_weights.end(), lift.g_.begin() + n);
    std::fill(lift.nu_.begin(), lift.nu_.begin() + n, 1.0);
    return lift;
  }

  static DiscreteLift diagonal(double dt, std::vector<double> nodes, std::vector<double> g,
                               std::vector<double> nu, Exactness exactness) {
    DiscreteLift lift;
    lift.kind_ = LiftKind::laplace;
    lift.exactness_ = exactness;
    lift.dt_ = dt;
    lift.nodes_ = std::move(nodes);
    lift.g_ = std::move(g);
    lift.nu_ = std::move(nu);
    lift.multipliers_.resize(lift.nodes_.size());
    for (std::size_t j = 0; j < lift.nodes_.size(); ++j)
      lift.multipliers_[j] = std::exp(-lift.nodes_[j] * dt);
    return lift;
  }

  LiftKind kind() const noexcept { return kind_; }
  Exactness exactness() const noexcept { return exactness_; }
  double dt() const noexcept { return dt_; }
  std::size_t dim() const noexcept { return g_.size(); }
  std::span<const double> g() const noexcept { return g_; }
  std::span<const double> nu() const noexcept { return nu_; }
  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> multipliers() const noexcept { return multipliers_; }
  // Shift lifts: number of support cells n (= horizon/dt); 0 for laplace.
  std::size_t support_cells() const noexcept { return cells_; }
  double horizon() const noexcept {
    return kind_ == LiftKind::shift ? static_cast<double>(cells_) * dt_
                                    : std::numeric_limits<double>::infinity();
  }
  std::span<const double> support_weights() const noexcept {
    return std::span<const double>(g_).subspan(kind_ == LiftKind::shift ? cells_ : 0);
  }

  // z <- E z
  void step_inplace(std::span<double> z) const {
    expect_dim("semigroup_step", dim(), z.size());
    if (kind_ == LiftKind::shift) {
      if (z.empty()) return;
      std::memmove(z.data() + 1, z.data(), (z.size() - 1) * sizeof(double));
      z[0] = 0.0;
    } else {
      for (std::size_t j = 0; j < z.size(); ++j) z[j] *= multipliers_[j];
    }
  }

  double pair(std::span<const double> z) const {
    expect_dim("pair", dim(), z.size());
    double acc = 0.0;
    const std::size_t first = kind_ == LiftKind::shift ? cells_ : 0;
    for (std::size_t i = first; i < z.size(); ++i) acc += g_[i] * z[i];
    return acc;
  }

  // <g, E^m z>
  double forward_pair(std::span<const double> z, std::size_t m) const {
    expect_dim("forward_pair", dim(), z.size());
    double acc = 0.0;
    if (kind_ == LiftKind::shift) {
      const std::size_t first = std::max(cells_, m);
      for (std::size_t i = first; i < z.size(); ++i) acc += g_[i] * z[i - m];
    } else {
      const double steps = static_cast<double>(m);
      for (std::size_t j = 0; j < z.size(); ++j)
        acc += g_[j] * std::exp(-nodes_[j] * dt_ * steps) * z[j];
    }
    return acc;
  }

 private:
  DiscreteLift() = default;

  LiftKind kind_ = LiftKind::custom;
  Exactness exactness_ = Exactness::approximate;
  double dt_ = 0.0;
  std::size_t cells_ = 0;
  std::vector<double> g_;
  std::vector<double> nu_;
  std::vector<double> nodes_;
  std::vector<double> multipliers_;
};

inline std::size_t grid_count(double horizon, double dt, const char* what) {
  if (!(dt > 0.0)) throw LiftError(std::string(what) + ": dt must be positive");
  if (!(horizon > 0.0)) throw LiftError(std::string(what) + ": horizon must be positive");
  const double ratio = horizon / dt;
  const auto n = static_cast<std::size_t>(std::llround(ratio));
  if (n == 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio)
    throw LiftError(std::string(what) + ": horizon must be a multiple of dt");
  return n;
}

/// Shift lift with cell-exact weights g_vec[i] = K((i+1)dt) - K(i dt); the
/// first cell absorbs K(0) as an atom, so reconstruction is exact at every
/// grid time k dt, k >= 1.
inline DiscreteLift build_shift_lift(const Kernel& kernel, double dt, double horizon) {
  const std::size_t n = grid_count(horizon, dt, "build_shift_lift");
  if (kernel.singular_at_zero)
    throw LiftError("shift lift needs g integrable on every cell; kernel '" + kernel.name +
                    "' is singular at 0");
  if (horizon > kernel.horizon * (1.0 + 1e-12))
    throw LiftError("lift horizon exceeds kernel horizon");
  std::vector<double> weights(n);
  double previous = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i + 1) * dt;
    const double value = kernel.evaluator(std::min(t, kernel.horizon));
    if (!std::isfinite(value))
      throw LiftError("kernel '" + kernel.name + "' is not finite on the lift grid");
    weights[i] = value - previous;
    previous = value;
  }
  return DiscreteLift::shift(dt, std::move(weights));
}

struct LaplaceQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule of order `order` on [-1, 1].
inline LaplaceQuadrature gauss_legendre(unsigned order) {
  if (order == 0) throw LiftError("Gauss-Legendre order must be positive");
  LaplaceQuadrature rule;
  const auto zeros = boost::math::legendre_p_zeros<double>(static_cast<int>(order));
  const int n = static_cast<int>(order);
  auto weight = [n](double x) {
    const double dp = boost::math::legendre_p_prime<double>(n, x);
    return 2.0 / ((1.0 - x * x) * dp * dp);
  };
  for (auto it = zeros.rbegin(); it != zeros.rend(); ++it) {
    if (*it == 0.0) continue;
    rule.nodes.push_back(-*it);
    rule.weights.push_back(weight(*it));
  }
  for (double z : zeros) {
    rule.nodes.push_back(z);
    rule.weights.push_back(weight(z));
  }
  return rule;
}

/// Default node set for K(t) = int exp(-x t) m(x) dx: `panels` geometric
/// panels over [scale 10^-decades, scale 10^decades], Gauss-Legendre inside
/// each. `n_nodes` must be a multiple of `panels`.
inline LaplaceQuadrature default_laplace_quadrature(double scale, std::size_t n_nodes,
                                                    std::size_t panels = 8,
                                                    double decades = 3.0) {
  if (!(scale > 0.0)) throw LiftError("laplace quadrature scale must be positive");
  if (panels == 0 || n_nodes == 0 || n_nodes % panels != 0)
    throw LiftError("node count must be a positive multiple of the panel count");
  const auto rule = gauss_legendre(static_cast<unsigned>(n_nodes / panels));
  const double lo = std::log(scale) - decades * std::log(10.0);
  const double hi = std::log(scale) + decades * std::log(10.0);
  LaplaceQuadrature q;
  for (std::size_t p = 0; p < panels; ++p) {
    const double a = std::exp(lo + (hi - lo) * static_cast<double>(p) / panels);
    const double b = std::exp(lo + (hi - lo) * static_cast<double>(p + 1) / panels);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      q.nodes.push_back(0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[i]);
      q.weights.push_back(0.5 * (b - a) * rule.weights[i]);
    }
  }
  return q;
}

struct LaplaceLiftOptions {
  double dt = 0.01;
  // Probe grid for the reconstruction bound: t in [probe_t_min, probe_t_max].
  double probe_t_min = 0.1;
  double probe_t_max = 1.0;
  std::size_t probe_points = 91;
  std::optional<double> max_rel_error;
};

inline double reconstruct_laplace(std::span<const double> nodes, std::span<const double> g,
                                  std::span<const double> nu, double t) {
  double acc = 0.0;
  for (std::size_t j = 0; j < nodes.size(); ++j) acc += g[j] * nu[j] * std::exp(-nodes[j] * t);
  return acc;
}

inline double laplace_probe_error(const Kernel& kernel, std::span<const double> nodes,
                                  std::span<const double> g, std::span<const double> nu,
                                  const LaplaceLiftOptions& opt) {
  double worst = 0.0;
  const std::size_t m = std::max<std::size_t>(opt.probe_points, 2);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = opt.probe_t_min + (opt.probe_t_max - opt.probe_t_min) * i / (m - 1);
    const double exact = eval_kernel(kernel, t);
    const double approx = reconstruct_laplace(nodes, g, nu, t);
    worst = std::max(worst, std::abs(approx - exact) / std::abs(exact));
  }
  return worst;
}

/// Diagonal lift from a quadrature of the Laplace measure of `kernel`:
/// g_j = nu_j = sqrt(w_j m(x_j)). Exponential kernels (unit atom at lambda)
/// accept the one-node rule {lambda}, {1}.
inline DiscreteLift build_laplace_lift(const Kernel& kernel, const LaplaceQuadrature& quad,
                                       const LaplaceLiftOptions& opt) {
  if (quad.nodes.empty() || quad.nodes.size() != quad.weights.size())
    throw LiftError("laplace lift needs matching, non-empty nodes and weights");
  if (!(opt.dt > 0.0)) throw LiftError("laplace lift: dt must be positive");
  for (double x : quad.nodes)
    if (!(x > 0.0) && !(x == 0.0 && kernel.exponential_rate == 0.0))
      throw LiftError("laplace lift nodes must be positive");
  const std::size_t n = quad.nodes.size();
  std::vector<double> g(n), nu(n);
  bool atomic = false;
  if (kernel.laplace_density) {
    for (std::size_t j = 0; j < n; ++j) {
      const double mass = quad.weights[j] * kernel.laplace_density(quad.nodes[j]);
      nu[j] = std::sqrt(std::abs(mass));
      g[j] = mass < 0.0 ? -nu[j] : nu[j];
    }
  } else if (kernel.exponential_rate) {
    atomic = true;
    for (std::size_t j = 0; j < n; ++j) {
      nu[j] = std::sqrt(std::abs(quad.weights[j]));
      g[j] = quad.weights[j] < 0.0 ? -nu[j] : nu[j];
    }
  } else {
    throw LiftError("kernel '" + kernel.name + "' has no Laplace representation");
  }
  if (opt.max_rel_error) {
    const double err = laplace_probe_error(kernel, quad.nodes, g, nu, opt);
    if (!(err <= *opt.max_rel_error)) {
      std::ostringstream msg;
      msg << "laplace lift reconstruction error " << err << " exceeds bound "
          << *opt.max_rel_error;
      throw LiftError(msg.str());
    }
  }
  const bool exact = atomic && n == 1 && quad.nodes[0] == *kernel.exponential_rate &&
                     quad.weights[0] == 1.0;
  return DiscreteLift::diagonal(opt.dt, quad.nodes, std::move(g), std::move(nu),
                                exact ? Exactness::grid_exact : Exactness::approximate);
}

/// Discrete pairing <g_vec, E^{t/dt} nu_vec> (shift) or sum_j g_j nu_j exp(-x_j t).
inline double reconstruct_kernel(const DiscreteLift& lift, double t) {
  if (!(t >= 0.0)) throw DomainError("reconstruct_kernel: t must be non-negative");
  if (lift.kind() == LiftKind::shift) {
    const double ratio = t / lift.dt();
    const auto k = static_cast<std::size_t>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(k)) > 1e-9 * std::max(1.0, ratio))
      throw DomainError("reconstruct_kernel: t is off the shift lift grid");
    if (k > lift.support_cells())
      throw DomainError("reconstruct_kernel: t beyond the shift lift horizon");
    return lift.forward_pair(lift.nu(), k);
  }
  return reconstruct_laplace(lift.nodes(), lift.g(), lift.nu(), t);
}

inline std::vector<double> semigroup_step(const DiscreteLift& lift, std::span<const double> state) {
  std::vector<double> out(state.begin(), state.end());
  lift.step_inplace(out);
  return out;
}

inline double pair(const DiscreteLift& lift, std::span<const double> z) { return lift.pair(z); }

/// K-hat(k dt) for k = 0..n_steps, the kernel the direct scheme must use to
/// agree with the lifted scheme.
inline std::vector<double> kernel_grid(const DiscreteLift& lift, std::size_t n_steps) {
  std::vector<double> out(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k)
    out[k] = reconstruct_kernel(lift, static_cast<double>(k) * lift.dt());
  return out;
}

/// Initial lifted state zeta with <g, E^k zeta> = x0(k dt), k = 0..n_steps.
///
/// Shift lifts: the support half is x0(0)/K(H) (covers k = 0), the reservoir
/// half solves a lower-triangular system with diagonal g_vec[0]. Diagonal
/// lifts: minimum-norm least squares over the grid.
inline std::vector<double> embed_initial_curve(const DiscreteLift& lift,
                                               const std::function<double(double)>& x0,
                                               std::size_t n_steps) {
  const double dt = lift.dt();
  if (lift.kind() == LiftKind::shift) {
    const std::size_t n = lift.support_cells();
    if (n_steps > n) throw LiftError("embed_initial_curve: grid longer than the lift horizon");
    const auto w = lift.support_weights();
    double total = 0.0;
    for (double v : w) total += v;
    if (total == 0.0 || w[0] == 0.0)
      throw LiftError("embed_initial_curve: shift lift needs g_vec[0] != 0 and K(H) != 0");
    const double a = x0(0.0) / total;
    std::vector<double> zeta(2 * n, 0.0);
    std::fill(zeta.begin() + n, zeta.end(), a);
    // Reservoir cell at distance r from the origin sits at index n-1-r.
    std::vector<double> partial(n + 1, 0.0);
    for (std::size_t c = 0; c < n; ++c) partial[c + 1] = partial[c] + w[c];
    std::vector<double> res(n, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
      double rhs = x0(static_cast<double>(k) * dt) - a * (total - partial[k]);
      for (std::size_t r = 0; r + 1 < k; ++r) rhs -= w[k - 1 - r] * res[r];
      res[k - 1] = rhs / w[0];
    }
    for (std::size_t r = 0; r < n; ++r) zeta[n - 1 - r] = res[r];
    return zeta;
  }
  const std::size_t d = lift.dim();
  Eigen::MatrixXd a(n_steps + 1, d);
  Eigen::VectorXd b(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    for (std::size_t j = 0; j < d; ++j)
      a(k, j) = lift.g()[j] * std::exp(-lift.nodes()[j] * t);
    b(k) = x0(t);
  }
  // Minimum-norm solution with a relative singular-value cutoff; keeps
  // ||zeta|| moderate while matching the grid to ~1e-12.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-12);
  const Eigen::VectorXd sol = svd.solve(b);
  return std::vector<double>(sol.data(), sol.data() + d);
}

/// Largest |<g, E^k zeta> - x0(k dt)| over the grid.
inline double embedding_error(const DiscreteLift& lift, std::span<const double> zeta,
                              const std::function<double(double)>& x0, std::size_t n_steps) {
  double worst = 0.0;
  for (std::size_t k = 0; k <= n_steps; ++k)
    worst = std::max(worst, std::abs(lift.forward_pair(zeta, k) -
                                     x0(static_cast<double>(k) * lift.dt())));
  return worst;
}

/// CSV: index,g_vec,nu_vec,step_op (multiplier for laplace, "shift" for shift).
inline void write_lift_csv(const DiscreteLift& lift, std::ostream& out) {
  const auto old_precision = out.precision(17);
  out << "index,g_vec,nu_vec,step_op\n";
  for (std::size_t i = 0; i < lift.dim(); ++i) {
    out << i << ',' << lift.g()[i] << ',' << lift.nu()[i] << ',';
    if (lift.kind() == LiftKind::shift)
      out << "shift";
    else
      out << lift.multipliers()[i];
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace vlift
