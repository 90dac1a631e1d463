#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include "vlift/control.hpp"
#include "vlift/errors.hpp"
#include "vlift/kernel.hpp"
#include "vlift/regression.hpp"

namespace vlift {

/// Parsed TOML subset: [section] headers, `key = value` with numbers,
/// booleans and double-quoted strings, `#` comments. Keys are "section.key".
using ConfigValue = std::variant<double, bool, std::string, std::uint64_t>;
using ConfigTable = std::map<std::string, ConfigValue>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

}  // namespace detail

inline ConfigTable parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigTable table;
  std::istringstream in(text);
  std::string section;
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const std::string line = detail::trim(detail::strip_comment(raw));
    auto fail = [&](const std::string& why) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::valid_key(section)) fail("bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (!detail::valid_key(key)) fail("bad key '" + key + "'");
    if (val.empty()) fail("missing value for '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) fail("duplicate key '" + full + "'");
    if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"') fail("unterminated string");
      table[full] = val.substr(1, val.size() - 2);
    } else if (val == "true" || val == "false") {
      table[full] = val == "true";
    } else {
      std::string num;
      for (char c : val)
        if (c != '_') num.push_back(c);
      try {
        std::size_t used = 0;
        if (!num.empty() && num.find_first_not_of("0123456789") == std::string::npos) {
          table[full] = static_cast<std::uint64_t>(std::stoull(num, &used));
          continue;
        }
        const double d = std::stod(num, &used);
        if (used != num.size()) fail("bad number '" + val + "'");
        table[full] = d;
      } catch (const std::invalid_argument&) {
        fail("bad value '" + val + "'");
      } catch (const std::out_of_range&) {
        fail("number out of range '" + val + "'");
      }
    }
  }
  return table;
}

inline ConfigTable parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

struct KernelSection {
  std::string spec;  // empty: the problem's catalog kernel
};

struct LiftSection {
  std::string kind = "auto";  // auto | shift | laplace
  std::optional<double> dt;   // default T / n_steps
  std::optional<double> horizon;  // default T
  std::size_t nodes = 64;
  std::size_t panels = 8;
  double decades = 3.0;
};

struct GridSection {
  double T = 1.0;
  std::size_t n_steps = 64;
  std::size_t n_paths = 10000;
  std::optional<std::uint64_t> seed;
};

struct SolverSection {
  std::string method = "both";  // lsmc | picard | both
  std::size_t picard_rounds = 8;
  double picard_tol = 1e-4;
  double agreement_se = 2.0;
};

struct OutputSection {
  std::string dir = "out";
  bool write_states = false;
  bool write_binary = true;
  std::size_t csv_paths = 20;
};

struct CheckSection {
  double shift_abs_tol = 1e-12;
  double laplace_rel_tol = 1e-3;
  double probe_t_min = 0.1;
  double probe_t_max = 1.0;
  std::size_t probe_points = 91;
  double equivalence_tol = 1e-10;
};

struct SimulateSection {
  double control = 0.0;
  std::int64_t seed_offset = 0;  // direct scheme seed shift (negative control)
};

struct OptimizeSection {
  std::size_t random_policies = 20;
  std::size_t trace_paths = 20;
  double band_se = 3.0;
};

struct ExperimentConfig {
  KernelSection kernel;
  LiftSection lift;
  std::string problem = "consumption_sqrt";
  ProblemParams params;
  GridSection grid;
  SolverSection solver;
  BasisSpec basis;
  OutputSection output;
  CheckSection check;
  SimulateSection simulate;
  OptimizeSection optimize;

  std::uint64_t seed() const { return *grid.seed; }
  double dt() const { return lift.dt.value_or(grid.T / static_cast<double>(grid.n_steps)); }
  double horizon() const { return lift.horizon.value_or(grid.T); }
  KernelSpec kernel_spec() const {
    if (!kernel.spec.empty()) return parse_kernel_spec(kernel.spec);
    return catalog_problem(problem, params).kernel;
  }
  std::string lift_kind() const {
    if (lift.kind != "auto") return lift.kind;
    return kernel_spec().family == "sqrt" ? "shift" : "laplace";
  }
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigTable& t) : table_(t) {}

  void num(const std::string& key, double& out) {
    if (auto v = take(key)) out = as_number(key, *v);
  }
  void num(const std::string& key, std::optional<double>& out) {
    if (auto v = take(key)) out = as_number(key, *v);
  }
  void count(const std::string& key, std::size_t& out) {
    if (auto v = take(key)) out = as_count(key, *v);
  }
  void integer(const std::string& key, std::int64_t& out) {
    if (auto v = take(key)) {
      const double d = as_number(key, *v);
      if (d != std::floor(d)) throw ConfigError(key + " must be an integer");
      out = static_cast<std::int64_t>(d);
    }
  }
  void seed(const std::string& key, std::optional<std::uint64_t>& out) {
    if (auto v = take(key)) out = as_count(key, *v);
  }
  void flag(const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (!std::holds_alternative<bool>(*v)) throw ConfigError(key + " must be true or false");
      out = std::get<bool>(*v);
    }
  }
  void text(const std::string& key, std::string& out) {
    if (auto v = take(key)) {
      if (!std::holds_alternative<std::string>(*v)) throw ConfigError(key + " must be a string");
      out = std::get<std::string>(*v);
    }
  }
  void degree(const std::string& key, int& out) {
    if (auto v = take(key)) out = static_cast<int>(as_count(key, *v));
  }

  void reject_unused() const {
    for (const auto& [k, v] : table_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  std::optional<ConfigValue> take(const std::string& key) {
    auto it = table_.find(key);
    if (it == table_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }
  static double as_number(const std::string& key, const ConfigValue& v) {
    if (std::holds_alternative<std::uint64_t>(v))
      return static_cast<double>(std::get<std::uint64_t>(v));
    if (!std::holds_alternative<double>(v)) throw ConfigError(key + " must be a number");
    return std::get<double>(v);
  }
  static std::size_t as_count(const std::string& key, const ConfigValue& v) {
    if (std::holds_alternative<std::uint64_t>(v)) return std::get<std::uint64_t>(v);
    const double d = as_number(key, v);
    if (d < 0.0 || d != std::floor(d) || d > 1.8e19)
      throw ConfigError(key + " must be a non-negative integer");
    return static_cast<std::size_t>(d);
  }

  const ConfigTable& table_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Builds a config from parsed keys on top of the defaults; unknown keys are errors.
inline ExperimentConfig config_from_table(const ConfigTable& t) {
  ExperimentConfig c;
  detail::ConfigReader r(t);
  r.text("problem.name", c.problem);
  c.params = catalog_defaults(c.problem);
  r.text("kernel.spec", c.kernel.spec);
  r.text("lift.kind", c.lift.kind);
  r.num("lift.dt", c.lift.dt);
  r.num("lift.horizon", c.lift.horizon);
  r.count("lift.nodes", c.lift.nodes);
  r.count("lift.panels", c.lift.panels);
  r.num("lift.decades", c.lift.decades);
  r.num("problem.a1", c.params.a1);
  r.num("problem.a2", c.params.a2);
  r.num("problem.cbar", c.params.cbar);
  r.num("problem.sigma0", c.params.sigma0);
  r.num("problem.sigma_amp", c.params.sigma_amp);
  r.num("problem.xbar", c.params.xbar);
  r.num("problem.eps", c.params.eps);
  r.num("problem.K_R", c.params.K_R);
  r.num("problem.u_lo", c.params.u_lo);
  r.num("problem.u_hi", c.params.u_hi);
  r.num("grid.T", c.grid.T);
  r.count("grid.n_steps", c.grid.n_steps);
  r.count("grid.n_paths", c.grid.n_paths);
  r.seed("grid.seed", c.grid.seed);
  r.text("solver.method", c.solver.method);
  r.count("solver.picard_rounds", c.solver.picard_rounds);
  r.num("solver.picard_tol", c.solver.picard_tol);
  r.num("solver.agreement_se", c.solver.agreement_se);
  r.degree("basis.x_degree", c.basis.x_degree);
  r.degree("basis.forward_degree", c.basis.forward_degree);
  r.flag("basis.cross_term", c.basis.cross_term);
  r.count("basis.lift_coords", c.basis.lift_coords);
  r.num("basis.ridge", c.basis.ridge);
  r.text("output.dir", c.output.dir);
  r.flag("output.write_states", c.output.write_states);
  r.flag("output.write_binary", c.output.write_binary);
  r.count("output.csv_paths", c.output.csv_paths);
  r.num("check.shift_abs_tol", c.check.shift_abs_tol);
  r.num("check.laplace_rel_tol", c.check.laplace_rel_tol);
  r.num("check.probe_t_min", c.check.probe_t_min);
  r.num("check.probe_t_max", c.check.probe_t_max);
  r.count("check.probe_points", c.check.probe_points);
  r.num("check.equivalence_tol", c.check.equivalence_tol);
  r.num("simulate.control", c.simulate.control);
  r.integer("simulate.seed_offset", c.simulate.seed_offset);
  r.count("optimize.random_policies", c.optimize.random_policies);
  r.count("optimize.trace_paths", c.optimize.trace_paths);
  r.num("optimize.band_se", c.optimize.band_se);
  r.reject_unused();
  c.params.T = c.grid.T;
  return c;
}

/// Structural checks; throws ConfigError.
inline void validate_config(const ExperimentConfig& c) {
  if (!c.grid.seed) throw ConfigError("grid.seed is required (no entropy-based default)");
  if (c.grid.n_steps == 0) throw ConfigError("grid.n_steps must be positive");
  if (c.grid.n_paths == 0) throw ConfigError("grid.n_paths must be positive");
  if (!(c.grid.T > 0.0)) throw ConfigError("grid.T must be positive");
  const double dt = c.dt();
  if (!(dt > 0.0)) throw ConfigError("lift.dt must be positive");
  if (std::abs(dt * static_cast<double>(c.grid.n_steps) - c.grid.T) > 1e-9 * c.grid.T)
    throw ConfigError("n_steps * dt must equal T");
  if (c.grid.T > c.horizon() * (1.0 + 1e-12)) throw ConfigError("T exceeds the lift horizon");
  if (c.lift.kind != "auto" && c.lift.kind != "shift" && c.lift.kind != "laplace")
    throw ConfigError("lift.kind must be auto, shift or laplace");
  if (c.solver.method != "lsmc" && c.solver.method != "picard" && c.solver.method != "both")
    throw ConfigError("solver.method must be lsmc, picard or both");
  const KernelSpec ks = c.kernel_spec();
  if (c.lift_kind() == "shift" && ks.family != "sqrt" && ks.family != "exp")
    throw ConfigError("shift lift needs a kernel that is finite at 0 with a closed form");
  if (c.lift_kind() == "laplace" && ks.family == "sqrt")
    throw ConfigError("the sqrt kernel has no Laplace density in the catalog");
  if (c.lift.nodes == 0 || c.lift.panels == 0 || c.lift.nodes % c.lift.panels != 0)
    throw ConfigError("lift.nodes must be a positive multiple of lift.panels");
  if (!(c.check.probe_t_max > c.check.probe_t_min) || c.check.probe_t_min < 0.0)
    throw ConfigError("check probe interval must satisfy 0 <= t_min < t_max");
  validate_basis(c.basis);
  const auto entry = catalog_problem(c.problem, c.params);
  (void)entry;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_table(parse_config_file(path));
}

/// Every setting, defaults included, in the config syntax.
inline void print_config(const ExperimentConfig& c, std::ostream& out) {
  std::ostringstream s;
  s << std::setprecision(17);
  auto opt = [](const std::optional<double>& v, const char* key, std::ostream& o) {
    if (v)
      o << key << " = " << *v << '\n';
    else
      o << "# " << key << " = (default)\n";
  };
  s << "[kernel]\n";
  s << "spec = \"" << (c.kernel.spec.empty() ? "" : c.kernel.spec) << "\"\n\n";
  s << "[lift]\nkind = \"" << c.lift.kind << "\"\n";
  s << "dt = " << c.dt() << '\n';
  s << "horizon = " << c.horizon() << '\n';
  s << "nodes = " << c.lift.nodes << "\npanels = " << c.lift.panels
    << "\ndecades = " << c.lift.decades << "\n\n";
  s << "[problem]\nname = \"" << c.problem << "\"\n";
  s << "a1 = " << c.params.a1 << "\na2 = " << c.params.a2 << "\ncbar = " << c.params.cbar
    << "\nsigma0 = " << c.params.sigma0 << "\nsigma_amp = " << c.params.sigma_amp
    << "\nxbar = " << c.params.xbar << "\neps = " << c.params.eps << "\nK_R = " << c.params.K_R
    << '\n';
  opt(c.params.u_lo, "u_lo", s);
  opt(c.params.u_hi, "u_hi", s);
  s << "\n[grid]\nT = " << c.grid.T << "\nn_steps = " << c.grid.n_steps
    << "\nn_paths = " << c.grid.n_paths << '\n';
  if (c.grid.seed)
    s << "seed = " << *c.grid.seed << '\n';
  else
    s << "# seed = (required)\n";
  s << "\n[solver]\nmethod = \"" << c.solver.method << "\"\npicard_rounds = "
    << c.solver.picard_rounds << "\npicard_tol = " << c.solver.picard_tol
    << "\nagreement_se = " << c.solver.agreement_se << "\n\n";
  s << "[basis]\nx_degree = " << c.basis.x_degree << "\nforward_degree = "
    << c.basis.forward_degree << "\ncross_term = " << (c.basis.cross_term ? "true" : "false")
    << "\nlift_coords = " << c.basis.lift_coords << "\nridge = " << c.basis.ridge << "\n\n";
  s << "[output]\ndir = \"" << c.output.dir << "\"\nwrite_states = "
    << (c.output.write_states ? "true" : "false")
    << "\nwrite_binary = " << (c.output.write_binary ? "true" : "false")
    << "\ncsv_paths = " << c.output.csv_paths << "\n\n";
  s << "[check]\nshift_abs_tol = " << c.check.shift_abs_tol
    << "\nlaplace_rel_tol = " << c.check.laplace_rel_tol
    << "\nprobe_t_min = " << c.check.probe_t_min << "\nprobe_t_max = " << c.check.probe_t_max
    << "\nprobe_points = " << c.check.probe_points
    << "\nequivalence_tol = " << c.check.equivalence_tol << "\n\n";
  s << "[simulate]\ncontrol = " << c.simulate.control
    << "\nseed_offset = " << c.simulate.seed_offset << "\n\n";
  s << "[optimize]\nrandom_policies = " << c.optimize.random_policies
    << "\ntrace_paths = " << c.optimize.trace_paths << "\nband_se = " << c.optimize.band_se
    << '\n';
  out << s.str();
}

}  // namespace vlift
