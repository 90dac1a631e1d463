#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vlift/errors.hpp"
#include "vlift/lift.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

/// Polynomial basis on linear probes of the lifted state at step k:
///   x = <g, Z_k>            (current value)
///   y = <g, E^{N-k} Z_k>    (value at T if no further noise arrives)
///   c_i = Z_k[i], i < lift_coords.
/// Terms: 1, x..x^x_degree, y..y^forward_degree, optionally x*y, then c_i.
struct BasisSpec {
  int x_degree = 3;
  int forward_degree = 2;
  bool cross_term = true;
  std::size_t lift_coords = 0;
  double ridge = 1e-8;

  std::size_t size() const {
    return 1 + static_cast<std::size_t>(x_degree) + static_cast<std::size_t>(forward_degree) +
           (cross_term && forward_degree > 0 ? 1 : 0) + lift_coords;
  }

  std::vector<std::string> term_names() const {
    std::vector<std::string> names{"1"};
    for (int d = 1; d <= x_degree; ++d) names.push_back(d == 1 ? "x" : "x^" + std::to_string(d));
    for (int d = 1; d <= forward_degree; ++d)
      names.push_back(d == 1 ? "y" : "y^" + std::to_string(d));
    if (cross_term && forward_degree > 0) names.push_back("x*y");
    for (std::size_t i = 0; i < lift_coords; ++i) names.push_back("z" + std::to_string(i));
    return names;
  }

  std::string describe() const {
    std::ostringstream s;
    s << "x_degree=" << x_degree << " forward_degree=" << forward_degree
      << " cross_term=" << (cross_term ? 1 : 0) << " lift_coords=" << lift_coords
      << " ridge=" << ridge;
    return s.str();
  }
};

inline void validate_basis(const BasisSpec& b) {
  if (b.x_degree < 0 || b.x_degree > 6 || b.forward_degree < 0 || b.forward_degree > 6)
    throw ConfigError("basis degrees must lie in [0, 6]");
  if (!(b.ridge >= 0.0)) throw ConfigError("basis ridge must be non-negative");
}

/// Linear probes of one state at one step. `coords` has basis.lift_coords entries.
struct Probe {
  double x = 0.0;
  double y = 0.0;
  std::vector<double> coords;
};

inline Probe probe_state(const DiscreteLift& lift, std::span<const double> z, std::size_t k,
                         std::size_t n_steps, std::size_t lift_coords) {
  Probe p;
  p.x = lift.pair(z);
  p.y = lift.forward_pair(z, n_steps - k);
  const std::size_t m = std::min(lift_coords, z.size());
  p.coords.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(m));
  p.coords.resize(lift_coords, 0.0);
  return p;
}

/// Probe shift caused by moving the state along `dir` at step k (probes are linear).
inline Probe probe_direction(const DiscreteLift& lift, std::span<const double> dir,
                             std::size_t k, std::size_t n_steps, std::size_t lift_coords) {
  return probe_state(lift, dir, k, n_steps, lift_coords);
}

inline Probe probe_axpy(const Probe& base, double h, const Probe& dir) {
  Probe out = base;
  out.x += h * dir.x;
  out.y += h * dir.y;
  for (std::size_t i = 0; i < out.coords.size(); ++i) out.coords[i] += h * dir.coords[i];
  return out;
}

inline void features_into(const BasisSpec& b, double x, double y, std::span<const double> coords,
                          std::span<double> out) {
  std::size_t j = 0;
  out[j++] = 1.0;
  double p = 1.0;
  for (int d = 1; d <= b.x_degree; ++d) out[j++] = (p *= x);
  p = 1.0;
  for (int d = 1; d <= b.forward_degree; ++d) out[j++] = (p *= y);
  if (b.cross_term && b.forward_degree > 0) out[j++] = x * y;
  for (std::size_t i = 0; i < b.lift_coords; ++i) out[j++] = i < coords.size() ? coords[i] : 0.0;
}

inline std::vector<double> features(const BasisSpec& b, const Probe& p) {
  std::vector<double> out(b.size());
  features_into(b, p.x, p.y, p.coords, out);
  return out;
}

/// Probes of every path at one step, gathered from an ensemble.
struct ProbeTable {
  std::vector<double> x, y;
  RowMatrix coords;  // n_paths x lift_coords
  std::size_t size() const { return x.size(); }
  Probe at(std::size_t i) const {
    Probe p;
    p.x = x[i];
    p.y = y[i];
    if (coords.cols() > 0)
      p.coords.assign(coords.row(static_cast<Eigen::Index>(i)).data(),
                      coords.row(static_cast<Eigen::Index>(i)).data() + coords.cols());
    return p;
  }
};

inline ProbeTable probes_at_step(const PathEnsemble& e, std::size_t k, const BasisSpec& b) {
  if (!e.lifted || e.forward.size() == 0)
    throw RegressionError("regression needs a lifted ensemble with forward pairings", k);
  if (b.lift_coords > e.lift_coords)
    throw RegressionError("basis asks for more lift coordinates than the ensemble recorded", k);
  ProbeTable t;
  const std::size_t P = e.n_paths();
  t.x.resize(P);
  t.y.resize(P);
  t.coords.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(b.lift_coords));
  for (std::size_t i = 0; i < P; ++i) {
    const auto ip = static_cast<Eigen::Index>(i);
    t.x[i] = e.X(ip, static_cast<Eigen::Index>(k));
    t.y[i] = e.forward(ip, static_cast<Eigen::Index>(k));
    const auto row = e.coord_row(i, k);
    for (std::size_t c = 0; c < b.lift_coords; ++c)
      t.coords(ip, static_cast<Eigen::Index>(c)) = row[c];
  }
  return t;
}

inline RowMatrix design_matrix(const BasisSpec& b, const ProbeTable& t) {
  RowMatrix a(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(b.size()));
  std::vector<double> coords(b.lift_coords);
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t c = 0; c < b.lift_coords; ++c)
      coords[c] = t.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    features_into(b, t.x[i], t.y[i], coords,
                  std::span<double>(a.row(static_cast<Eigen::Index>(i)).data(), b.size()));
  }
  return a;
}

struct FitDiagnostics {
  double r2 = 1.0;
  double condition = 1.0;
  std::size_t active_terms = 0;
};

struct LinearFit {
  Eigen::VectorXd coef;
  FitDiagnostics diag;
};

/// Least squares y ~ A c with column 0 the constant. Non-constant columns are
/// standardized; columns with no spread are dropped (coefficient 0). Normal
/// equations with ridge lambda * trace / p on the standardized block.
inline LinearFit least_squares(const RowMatrix& a, std::span<const double> target, double ridge,
                               std::size_t step) {
  const Eigen::Index n = a.rows(), p = a.cols();
  expect_dim("least_squares: target", static_cast<std::size_t>(n), target.size());
  if (n == 0) throw RegressionError("empty regression", step);
  if (!a.allFinite()) throw RegressionError("non-finite design matrix", step);
  const Eigen::Map<const Eigen::VectorXd> yv(target.data(), n);
  if (!yv.allFinite()) throw RegressionError("non-finite regression target", step);

  const double ymean = yv.mean();
  std::vector<Eigen::Index> active;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p), scale = Eigen::VectorXd::Ones(p);
  for (Eigen::Index j = 1; j < p; ++j) {
    mean(j) = a.col(j).mean();
    const double sd = std::sqrt((a.col(j).array() - mean(j)).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(mean(j)))) {
      scale(j) = sd;
      active.push_back(j);
    }
  }
  LinearFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  fit.diag.active_terms = active.size() + 1;
  const double ss_tot = (yv.array() - ymean).square().sum();
  if (active.empty()) {
    fit.coef(0) = ymean;
    fit.diag.r2 = ss_tot > 0.0 ? 0.0 : 1.0;
    return fit;
  }
  const auto q = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd s(n, q);
  for (Eigen::Index c = 0; c < q; ++c)
    s.col(c) = (a.col(active[c]).array() - mean(active[c])) / scale(active[c]);
  Eigen::MatrixXd gram = s.transpose() * s;
  const Eigen::VectorXd rhs = s.transpose() * (yv.array() - ymean).matrix();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double emax = eig.eigenvalues().maxCoeff();
  const double emin = std::max(eig.eigenvalues().minCoeff(), 0.0);
  fit.diag.condition = emin > 0.0 ? emax / emin : std::numeric_limits<double>::infinity();
  if (ridge == 0.0 && fit.diag.condition > 1e8)
    throw RegressionError("rank-deficient regression without ridge", step);
  gram.diagonal().array() += ridge * gram.trace() / static_cast<double>(q);
  const Eigen::VectorXd beta = gram.ldlt().solve(rhs);
  if (!beta.allFinite()) throw RegressionError("regression solve failed", step);
  double intercept = ymean;
  for (Eigen::Index c = 0; c < q; ++c) {
    const double coef = beta(c) / scale(active[c]);
    fit.coef(active[c]) = coef;
    intercept -= coef * mean(active[c]);
  }
  fit.coef(0) = intercept;
  const Eigen::VectorXd resid = yv - a * fit.coef;
  const double ss_res = resid.squaredNorm();
  fit.diag.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res < 1e-20 ? 1.0 : 0.0);
  return fit;
}

/// One coefficient vector per step k = 0..N-1; step N is the terminal map.
struct StepwiseFit {
  BasisSpec basis;
  std::size_t n_steps = 0;
  std::vector<Eigen::VectorXd> coef;  // size N
  std::function<double(double)> terminal;

  double eval(std::size_t k, const Probe& p) const {
    if (k > n_steps) throw std::out_of_range("StepwiseFit: step beyond grid");
    if (k == n_steps) return terminal(p.x);
    std::vector<double> f(basis.size());
    features_into(basis, p.x, p.y, p.coords, f);
    const Eigen::VectorXd& c = coef[k];
    double acc = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) acc += c(static_cast<Eigen::Index>(j)) * f[j];
    return acc;
  }

  double eval_state(const DiscreteLift& lift, std::size_t k, std::span<const double> z) const {
    return eval(k, probe_state(lift, z, k, n_steps, basis.lift_coords));
  }

  /// Central difference of step k along a probe direction, step h.
  double directional(std::size_t k, const Probe& at, const Probe& dir, double h) const {
    return (eval(k, probe_axpy(at, h, dir)) - eval(k, probe_axpy(at, -h, dir))) / (2.0 * h);
  }
  double second_directional(std::size_t k, const Probe& at, const Probe& dir, double h) const {
    return (eval(k, probe_axpy(at, h, dir)) - 2.0 * eval(k, at) +
            eval(k, probe_axpy(at, -h, dir))) /
           (h * h);
  }
};

/// Finite-difference step 1e-4 (1 + ||P||_inf) on the probe values.
inline double fd_step(const Probe& p) {
  double m = std::max(std::abs(p.x), std::abs(p.y));
  for (double c : p.coords) m = std::max(m, std::abs(c));
  return 1e-4 * (1.0 + m);
}

/// Probe shift of E nu seen at step k + 1: the state change caused by a unit
/// noise increment during step k.
inline Probe noise_direction(const DiscreteLift& lift, std::size_t k, std::size_t n_steps,
                             std::size_t lift_coords) {
  std::vector<double> d(lift.nu().begin(), lift.nu().end());
  lift.step_inplace(d);
  return probe_direction(lift, d, k + 1, n_steps, lift_coords);
}

}  // namespace vlift
