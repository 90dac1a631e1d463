#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vlift/bsde.hpp"
#include "vlift/config.hpp"
#include "vlift/control.hpp"
#include "vlift/hjb.hpp"
#include "vlift/io.hpp"
#include "vlift/kernel.hpp"
#include "vlift/lift.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitTolerance = 2 };

/// Everything a command needs that follows from the config alone.
struct Setup {
  ExperimentConfig cfg;
  Kernel kernel;
  DiscreteLift lift;
  ControlProblem problem;
  std::vector<double> zeta0;
  double embedding_error = 0.0;
};

inline DiscreteLift build_lift_from_config(const ExperimentConfig& cfg, const Kernel& kernel) {
  const double dt = cfg.dt();
  if (cfg.lift_kind() == "shift") return build_shift_lift(kernel, dt, cfg.horizon());
  LaplaceLiftOptions opt;
  opt.dt = dt;
  opt.probe_t_min = cfg.check.probe_t_min;
  opt.probe_t_max = cfg.check.probe_t_max;
  opt.probe_points = cfg.check.probe_points;
  if (kernel.exponential_rate) return build_laplace_lift(kernel, {{*kernel.exponential_rate}, {1.0}}, opt);
  const KernelSpec ks = cfg.kernel_spec();
  const auto quad = default_laplace_quadrature(ks.parameter, cfg.lift.nodes, cfg.lift.panels,
                                               cfg.lift.decades);
  return build_laplace_lift(kernel, quad, opt);
}

inline Setup make_setup(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const Kernel kernel = make_kernel(cfg.kernel_spec(), cfg.horizon());
  DiscreteLift lift = build_lift_from_config(cfg, kernel);
  ControlProblem problem = catalog_problem(cfg.problem, cfg.params).problem;
  auto zeta = embed_initial_curve(lift, problem.coeffs.x0, cfg.grid.n_steps);
  const double err = vlift::embedding_error(lift, zeta, problem.coeffs.x0, cfg.grid.n_steps);
  return Setup{cfg, kernel, std::move(lift), std::move(problem), std::move(zeta), err};
}

inline VolterraCoefficients uncontrolled(const VolterraCoefficients& c) {
  VolterraCoefficients out = c;
  out.control_drift = nullptr;
  return out;
}

inline std::shared_ptr<const BrownianGrid> make_grid(const ExperimentConfig& cfg, Stream stream,
                                                     std::uint64_t seed_shift = 0) {
  return std::make_shared<const BrownianGrid>(make_brownian_grid(
      0.0, cfg.grid.T, cfg.grid.n_steps, cfg.grid.n_paths, cfg.seed() + seed_shift, stream));
}

/// Uncontrolled forward ensemble shared by both solvers.
inline PathEnsemble forward_ensemble(const Setup& s, bool store_states = false) {
  SimulationOptions opt;
  opt.lift_coords = s.cfg.basis.lift_coords;
  opt.store_states = store_states;
  return simulate_lifted(uncontrolled(s.problem.coeffs), s.lift, constant_policy(0.0),
                         make_grid(s.cfg, Stream::forward), s.zeta0, opt);
}

/// Closed form of the consumption problems with constant sigma: c = cbar at
/// every state, so J* = -a1 cbar^2 T + a2 xbar - a2 sigma0 cbar int_0^T K.
/// Empty when the problem is outside that family.
inline std::optional<double> consumption_reference(const Setup& s) {
  const auto& pp = s.cfg.params;
  if (s.cfg.problem.rfind("consumption", 0) != 0) return std::nullopt;
  if (pp.sigma_amp != 0.0 || pp.a2 < 0.0 || pp.a1 < 0.0) return std::nullopt;
  if (s.problem.u_lo != 0.0 || s.problem.u_hi != pp.cbar) return std::nullopt;
  if (!s.kernel.antiderivative) return std::nullopt;
  const double T = s.cfg.grid.T;
  return -pp.a1 * pp.cbar * pp.cbar * T + pp.a2 * pp.xbar -
         pp.a2 * pp.sigma0 * pp.cbar * s.kernel.antiderivative(T);
}

/// O(dt^{1/2}) discretization allowance for the consumption closed form.
inline double consumption_bias_band(const Setup& s) {
  const auto& pp = s.cfg.params;
  return std::abs(pp.a2) * pp.sigma0 * pp.cbar * s.cfg.grid.T * std::sqrt(s.cfg.dt());
}

struct SolveResults {
  std::optional<BsdeSolution> lsmc;
  std::optional<ValueFunction> picard;
  std::optional<IdentificationReport> identification;
};

inline SolveResults run_solvers(const Setup& s, const PathEnsemble& forward) {
  SolveResults r;
  const std::string& m = s.cfg.solver.method;
  if (m == "lsmc" || m == "both") {
    r.lsmc = solve_lsmc(forward, s.problem, s.lift, s.cfg.basis);
    r.identification = identification_check(*r.lsmc, forward, s.lift, s.problem);
  }
  if (m == "picard" || m == "both") {
    PicardOptions po;
    po.n_rounds = s.cfg.solver.picard_rounds;
    po.tol = s.cfg.solver.picard_tol;
    r.picard = picard_mild_solve(s.problem, s.lift, forward, s.cfg.basis, po);
  }
  return r;
}

/// Random admissible policies: constants and clipped affine feedbacks in X,
/// drawn from the policy substream.
inline std::vector<NamedPolicy> random_policies(const ControlProblem& problem, std::size_t count,
                                                std::uint64_t seed, double x_center) {
  std::mt19937_64 rng(derive_seed(seed, Stream::policy_draws, 0));
  std::uniform_real_distribution<double> level(problem.u_lo, problem.u_hi);
  std::uniform_real_distribution<double> slope(-2.0, 2.0);
  std::vector<NamedPolicy> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << std::setprecision(6);
    if (i % 2 == 0) {
      const double u = level(rng);
      name << "constant(" << u << ")";
      out.push_back({name.str(), constant_policy(u), false});
    } else {
      const double a = level(rng), b = slope(rng);
      const double lo = problem.u_lo, hi = problem.u_hi;
      name << "affine(" << a << "," << b << ")";
      out.push_back({name.str(),
                     [=](const PolicyInput& in) {
                       return std::clamp(a + b * (in.x - x_center), lo, hi);
                     },
                     false});
    }
  }
  return out;
}

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Exclusive claim on an output directory for the life of a command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".vlift.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("output directory is locked by another run: " + dir.string());
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

inline void write_manifest(const fs::path& dir, const std::string& command,
                           const ExperimentConfig& cfg, double wall_seconds, int exit_code) {
  auto m = open_output(dir / "manifest.txt");
  m << "# vlift run manifest\n";
  m << "command = \"" << command << "\"\n";
  m << "version = \"" << kVersion << "\"\n";
  m << "seed = " << cfg.seed() << '\n';
  m << "exit_code = " << exit_code << '\n';
  m << "timestamp = \"" << utc_timestamp() << "\"\n";
  m << "wall_seconds = " << std::setprecision(6) << wall_seconds << "\n\n";
  m << "# resolved configuration\n";
  print_config(cfg, m);
}

inline void kv(std::ostream& out, const std::string& key, double value) {
  out << key << ',' << value << '\n';
}
inline void kv(std::ostream& out, const std::string& key, const std::string& value) {
  out << key << ',' << value << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each writes CSVs into `out` and returns an exit code; config
// problems surface as ConfigError and are mapped to exit 1 by run_command.

inline int cmd_lift_check(const Setup& s, const fs::path& out, std::ostream& log) {
  auto csv = open_output(out / "lift_check.csv");
  csv << "t,K,K_hat,abs_err,rel_err\n";
  double max_abs = 0.0, max_rel = 0.0;
  auto row = [&](double t) {
    const double k = eval_kernel(s.kernel, t);
    const double kh = reconstruct_kernel(s.lift, t);
    const double abs_err = std::abs(kh - k);
    const double rel_err = k != 0.0 ? abs_err / std::abs(k) : abs_err;
    csv << t << ',' << k << ',' << kh << ',' << abs_err << ',' << rel_err << '\n';
    max_abs = std::max(max_abs, abs_err);
    max_rel = std::max(max_rel, rel_err);
  };
  const bool exact = s.lift.exactness() == Exactness::grid_exact && s.lift.kind() == LiftKind::shift;
  if (exact) {
    const std::size_t n = s.lift.support_cells();
    const std::size_t first = s.kernel.evaluator(0.0) == 0.0 ? 0 : 1;
    for (std::size_t k = first; k <= n; ++k) row(static_cast<double>(k) * s.lift.dt());
  } else {
    const auto& c = s.cfg.check;
    const std::size_t m = std::max<std::size_t>(c.probe_points, 2);
    for (std::size_t i = 0; i < m; ++i)
      row(c.probe_t_min + (c.probe_t_max - c.probe_t_min) * static_cast<double>(i) / (m - 1));
  }
  {
    auto lf = open_output(out / "lift.csv");
    write_lift_csv(s.lift, lf);
  }
  const double tol = exact ? s.cfg.check.shift_abs_tol : s.cfg.check.laplace_rel_tol;
  const double measured = exact ? max_abs : max_rel;
  const bool ok = measured <= tol;
  auto rep = open_output(out / "lift_check_report.csv");
  rep << "key,value\n";
  detail::kv(rep, "lift_kind", to_string(s.lift.kind()));
  detail::kv(rep, "dim", static_cast<double>(s.lift.dim()));
  detail::kv(rep, "criterion", exact ? "max_abs_err_on_grid" : "max_rel_err_on_probe_grid");
  detail::kv(rep, "max_abs_err", max_abs);
  detail::kv(rep, "max_rel_err", max_rel);
  detail::kv(rep, "tolerance", tol);
  detail::kv(rep, "status", ok ? "pass" : "fail");
  log << "lift-check: " << to_string(s.lift.kind()) << " lift, dim " << s.lift.dim() << ", "
      << (exact ? "max abs err " : "max rel err ") << measured << " (tol " << tol << ") -> "
      << (ok ? "ok" : "FAIL") << '\n';
  return ok ? kExitOk : kExitTolerance;
}

inline int cmd_simulate(const Setup& s, const fs::path& out, std::ostream& log) {
  const auto& cfg = s.cfg;
  const std::size_t N = cfg.grid.n_steps;
  const Policy policy = constant_policy(cfg.simulate.control);
  SimulationOptions opt;
  opt.store_states = cfg.output.write_states;
  const auto grid = make_grid(cfg, Stream::forward);
  const PathEnsemble lifted = simulate_lifted(s.problem.coeffs, s.lift, policy, grid, s.zeta0, opt);

  const bool exact = s.lift.exactness() == Exactness::grid_exact;
  std::vector<double> kgrid;
  if (exact) {
    kgrid = kernel_grid(s.lift, N);
  } else {
    kgrid.resize(N + 1);
    for (std::size_t k = 0; k <= N; ++k) {
      const double t = static_cast<double>(k) * cfg.dt();
      kgrid[k] = k == 0 && s.kernel.singular_at_zero ? 0.0 : eval_kernel(s.kernel, t);
    }
  }
  const auto shift = static_cast<std::uint64_t>(cfg.simulate.seed_offset);
  const auto direct_grid = cfg.simulate.seed_offset == 0 ? grid : make_grid(cfg, Stream::forward, shift);
  const PathEnsemble direct = simulate_direct(s.problem.coeffs, kgrid, policy, direct_grid);

  double sup = 0.0;
  {
    auto eq = open_output(out / "equivalence.csv");
    eq << "path_id,max_abs_diff\n";
    for (std::size_t p = 0; p < lifted.n_paths(); ++p) {
      const auto ip = static_cast<Eigen::Index>(p);
      const double d = (lifted.X.row(ip) - direct.X.row(ip)).cwiseAbs().maxCoeff();
      sup = std::max(sup, d);
      eq << p << ',' << d << '\n';
    }
  }
  {
    auto f = open_output(out / "ensemble_lifted.csv");
    write_ensemble_csv(lifted, f, cfg.output.write_states, cfg.output.csv_paths);
    auto g = open_output(out / "ensemble_direct.csv");
    write_ensemble_csv(direct, g, false, cfg.output.csv_paths);
  }
  if (cfg.output.write_binary) {
    auto b = open_output(out / "ensemble_lifted.bin");
    write_ensemble_binary(lifted, b);
  }
  const bool ok = !exact || sup <= cfg.check.equivalence_tol;
  auto rep = open_output(out / "simulate_report.csv");
  rep << "key,value\n";
  detail::kv(rep, "lift_kind", to_string(s.lift.kind()));
  detail::kv(rep, "mode", exact ? "check" : "report-only");
  detail::kv(rep, "n_paths", static_cast<double>(lifted.n_paths()));
  detail::kv(rep, "n_steps", static_cast<double>(N));
  detail::kv(rep, "seed_offset", static_cast<double>(cfg.simulate.seed_offset));
  detail::kv(rep, "embedding_error", s.embedding_error);
  detail::kv(rep, "sup_abs_diff", sup);
  detail::kv(rep, "tolerance", cfg.check.equivalence_tol);
  detail::kv(rep, "flagged_lifted", static_cast<double>(lifted.flagged_count()));
  detail::kv(rep, "flagged_direct", static_cast<double>(direct.flagged_count()));
  detail::kv(rep, "status", ok ? "pass" : "fail");
  if (!exact)
    log << "simulate: warning: approximate lift, equivalence reported only (sup diff " << sup
        << " against the exact kernel)\n";
  else
    log << "simulate: sup |X_direct - <g,Z>| = " << sup << " (tol " << cfg.check.equivalence_tol
        << ") -> " << (ok ? "ok" : "FAIL") << '\n';
  return ok ? kExitOk : kExitTolerance;
}

struct SolveSummary {
  SolveResults results;
  int exit_code = kExitOk;
};

inline SolveSummary solve_and_report(const Setup& s, const PathEnsemble& forward,
                                     const fs::path& out, std::ostream& log) {
  SolveSummary sum;
  sum.results = run_solvers(s, forward);
  const auto& r = sum.results;
  auto rep = open_output(out / "solve_report.csv");
  rep << "method,value,std_error,rounds,converged\n";
  if (r.lsmc) {
    rep << "lsmc," << r.lsmc->v0 << ',' << r.lsmc->std_error << ",1,1\n";
    write_bundle(make_bundle(*r.lsmc, s.lift), out / "bundle_lsmc");
    log << "solve: lsmc v = " << r.lsmc->v0 << " +- " << r.lsmc->std_error << '\n';
  }
  if (r.picard) {
    rep << "picard," << r.picard->w0 << ',' << r.picard->std_error << ',' << r.picard->rounds
        << ',' << (r.picard->converged ? 1 : 0) << '\n';
    write_bundle(make_bundle(*r.picard, s.lift), out / "bundle_picard");
    auto d = open_output(out / "picard_deltas.csv");
    d << "round,sup_delta\n";
    for (std::size_t i = 0; i < r.picard->deltas.size(); ++i)
      d << i + 1 << ',' << r.picard->deltas[i] << '\n';
    log << "solve: picard w = " << r.picard->w0 << " +- " << r.picard->std_error << " after "
        << r.picard->rounds << " rounds\n";
  }
  auto agr = open_output(out / "agreement.csv");
  agr << "quantity,estimate,std_error,reference,band,within\n";
  if (r.lsmc && r.picard) {
    const double comb = std::hypot(r.lsmc->std_error, r.picard->std_error);
    const double diff = std::abs(r.lsmc->v0 - r.picard->w0);
    const double band = s.cfg.solver.agreement_se * comb;
    const bool ok = diff <= band;
    agr << "lsmc_minus_picard," << r.lsmc->v0 - r.picard->w0 << ',' << comb << ",0," << band
        << ',' << (ok ? 1 : 0) << '\n';
    log << "solve: |v_lsmc - w_picard| = " << diff << " vs " << s.cfg.solver.agreement_se
        << " combined SE = " << band << " -> " << (ok ? "ok" : "FAIL") << '\n';
    if (!ok) sum.exit_code = kExitTolerance;
  }
  if (const auto ref = consumption_reference(s)) {
    const double bias = consumption_bias_band(s);
    auto line = [&](const char* name, double est, double se) {
      const double band = 3.0 * se + bias;
      agr << name << ',' << est << ',' << se << ',' << *ref << ',' << band << ','
          << (std::abs(est - *ref) <= band ? 1 : 0) << '\n';
    };
    if (r.lsmc) line("lsmc_vs_closed_form", r.lsmc->v0, r.lsmc->std_error);
    if (r.picard) line("picard_vs_closed_form", r.picard->w0, r.picard->std_error);
  }
  if (r.identification) {
    auto id = open_output(out / "identification.csv");
    id << "key,value\n";
    detail::kv(id, "samples", static_cast<double>(r.identification->samples));
    detail::kv(id, "median_rel_error", r.identification->median_rel_error);
    detail::kv(id, "p90_rel_error", r.identification->p90_rel_error);
  }
  return sum;
}

inline int cmd_solve(const Setup& s, const fs::path& out, std::ostream& log) {
  const PathEnsemble forward = forward_ensemble(s);
  return solve_and_report(s, forward, out, log).exit_code;
}

struct OptimizeSummary {
  double value = 0.0;
  double value_se = 0.0;
  CostEstimate closed_loop;
  double upper_fraction = 0.0;
  VerificationReport verification;
  int exit_code = kExitOk;
};

inline OptimizeSummary optimize_and_report(const Setup& s, const SolveResults& solved,
                                           const fs::path& out, std::ostream& log) {
  OptimizeSummary sum;
  const auto& cfg = s.cfg;
  StepwiseFit w;
  if (solved.picard) {
    w = solved.picard->w;
    sum.value = solved.picard->w0;
    sum.value_se = solved.picard->std_error;
  } else if (solved.lsmc) {
    w = solved.lsmc->p;
    sum.value = solved.lsmc->v0;
    sum.value_se = solved.lsmc->std_error;
  } else {
    throw ConfigError("optimize needs a solver");
  }
  const Policy fb = feedback_policy(w, s.problem, s.lift);
  SimulationOptions so;
  so.record_forward = false;
  const PathEnsemble cl = closed_loop_simulate(s.problem, s.lift, fb, make_grid(cfg, Stream::closed_loop),
                                               s.zeta0, so);
  sum.closed_loop = evaluate_cost(s.problem, cl);
  std::size_t upper = 0;
  for (Eigen::Index i = 0; i < cl.controls.size(); ++i)
    upper += std::abs(cl.controls.data()[i] - s.problem.u_hi) <= 1e-9 ? 1 : 0;
  sum.upper_fraction = static_cast<double>(upper) / static_cast<double>(cl.controls.size());
  {
    auto tr = open_output(out / "policy_trace.csv");
    write_policy_trace(cl, tr, cfg.optimize.trace_paths);
  }

  std::vector<NamedPolicy> policies{{"feedback", fb, true},
                                    {"endpoint_lo", constant_policy(s.problem.u_lo), false},
                                    {"endpoint_hi", constant_policy(s.problem.u_hi), false}};
  for (auto& p : random_policies(s.problem, cfg.optimize.random_policies, cfg.seed(),
                                 s.problem.coeffs.x0(0.0)))
    policies.push_back(std::move(p));
  sum.verification = verify_value_inequality(s.problem, s.lift, sum.value, sum.value_se, policies,
                                             make_grid(cfg, Stream::verification), s.zeta0);
  const double band = cfg.optimize.band_se;
  bool ok = true;
  auto vr = open_output(out / "verification.csv");
  vr << "policy,J,J_se,combined_se,gap,gap_in_se,ok\n";
  for (auto& row : sum.verification.rows) {
    row.ok = row.is_feedback ? std::abs(row.gap) <= band * row.combined_se
                             : row.gap >= -band * row.combined_se;
    ok = ok && row.ok;
    vr << row.name << ',' << row.J << ',' << row.J_se << ',' << row.combined_se << ','
       << row.gap << ',' << row.gap / std::max(row.combined_se, 1e-300) << ','
       << (row.ok ? 1 : 0) << '\n';
  }
  auto rep = open_output(out / "optimize_report.csv");
  rep << "key,value\n";
  detail::kv(rep, "value", sum.value);
  detail::kv(rep, "value_se", sum.value_se);
  detail::kv(rep, "closed_loop_J", sum.closed_loop.J);
  detail::kv(rep, "closed_loop_se", sum.closed_loop.std_error);
  detail::kv(rep, "upper_endpoint_fraction", sum.upper_fraction);
  detail::kv(rep, "verification", ok ? "pass" : "fail");
  log << "optimize: closed-loop J = " << sum.closed_loop.J << " +- " << sum.closed_loop.std_error
      << ", value " << sum.value << ", u = u_hi on " << 100.0 * sum.upper_fraction
      << "% of states, verification " << (ok ? "ok" : "FAIL") << '\n';
  sum.exit_code = ok ? kExitOk : kExitTolerance;
  return sum;
}

inline int cmd_optimize(const Setup& s, const fs::path& out, std::ostream& log) {
  const PathEnsemble forward = forward_ensemble(s);
  const SolveResults solved = run_solvers(s, forward);
  return optimize_and_report(s, solved, out, log).exit_code;
}

/// Lift check, both solvers, feedback optimization and the closed-form table.
inline int cmd_consumption_example(const Setup& s_in, const fs::path& out, std::ostream& log) {
  if (s_in.cfg.problem.rfind("consumption", 0) != 0)
    throw ConfigError("consumption-example needs a consumption_* problem");
  ExperimentConfig cfg = s_in.cfg;
  cfg.solver.method = "both";
  const Setup s = make_setup(cfg);
  int code = kExitOk;
  auto worst = [&](int c) { code = std::max(code, c); };
  worst(cmd_lift_check(s, out / "lift_check", log));
  const PathEnsemble forward = forward_ensemble(s);
  const SolveSummary solved = solve_and_report(s, forward, out / "solve", log);
  worst(solved.exit_code);
  const OptimizeSummary opt = optimize_and_report(s, solved.results, out / "optimize", log);
  worst(opt.exit_code);

  auto table = open_output(out / "closed_form.csv");
  table << "quantity,estimate,std_error,closed_form,band,within\n";
  const auto ref = consumption_reference(s);
  if (ref) {
    const double bias = consumption_bias_band(s);
    auto line = [&](const char* name, double est, double se) {
      const double band = 3.0 * se + bias;
      const bool ok = std::abs(est - *ref) <= band;
      table << name << ',' << est << ',' << se << ',' << *ref << ',' << band << ','
            << (ok ? 1 : 0) << '\n';
      if (!ok) worst(kExitTolerance);
    };
    line("v_lsmc", solved.results.lsmc->v0, solved.results.lsmc->std_error);
    line("w_picard", solved.results.picard->w0, solved.results.picard->std_error);
    line("J_closed_loop", opt.closed_loop.J, opt.closed_loop.std_error);
    const bool ok = opt.upper_fraction >= 0.99;
    table << "upper_endpoint_fraction," << opt.upper_fraction << ",0,1,0.01," << (ok ? 1 : 0)
          << '\n';
    if (!ok) worst(kExitTolerance);
    log << "consumption-example: closed form J* = " << *ref << '\n';
  } else {
    log << "consumption-example: no closed form for this parameter set; table left empty\n";
  }
  return code;
}

/// Runs `command` with output directory handling, lock, manifest and the
/// exit-code contract (0 ok, 1 config error, 2 tolerance violation).
inline int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log,
                       std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const Setup s = make_setup(cfg);
    const fs::path out = cfg.output.dir;
    detail::DirLock lock(out);
    int code = kExitOk;
    if (command == "lift-check")
      code = cmd_lift_check(s, out, log);
    else if (command == "simulate")
      code = cmd_simulate(s, out, log);
    else if (command == "solve")
      code = cmd_solve(s, out, log);
    else if (command == "optimize")
      code = cmd_optimize(s, out, log);
    else if (command == "consumption-example")
      code = cmd_consumption_example(s, out, log);
    else
      throw ConfigError("unknown command: " + command);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    detail::write_manifest(out, command, cfg, wall, code);
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const LiftError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ControlError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitTolerance;
  }
}

}  // namespace vlift
