#pragma once

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlift/bsde.hpp"
#include "vlift/hjb.hpp"
#include "vlift/regression.hpp"
#include "vlift/simulate.hpp"

namespace vlift {

namespace fs = std::filesystem;

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

/// Long format: path_id,step,t,X and, with `with_states`, z0..z{dim-1}.
/// `max_paths` = 0 writes every path.
inline void write_ensemble_csv(const PathEnsemble& e, std::ostream& out, bool with_states = false,
                               std::size_t max_paths = 0) {
  if (with_states && !e.has_states())
    throw std::invalid_argument("ensemble has no stored lift states");
  const auto old = out.precision(17);
  out << "path_id,step,t,X";
  if (with_states)
    for (std::size_t i = 0; i < e.dim; ++i) out << ",z" << i;
  out << '\n';
  const std::size_t P = max_paths ? std::min(max_paths, e.n_paths()) : e.n_paths();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k <= e.n_steps(); ++k) {
      out << p << ',' << k << ',' << e.grid->time(k) << ','
          << e.X(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
      if (with_states)
        for (double v : e.state(p, k)) out << ',' << v;
      out << '\n';
    }
  out.precision(old);
}

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), 8))
    throw std::runtime_error("truncated ensemble dump");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline void put_matrix(std::ostream& out, const RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
}
inline void get_matrix(std::istream& in, RowMatrix& m, std::size_t rows, std::size_t cols) {
  m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(in);
}

constexpr char kMagic[5] = {'V', 'L', 'F', 'T', '1'};
constexpr std::uint64_t kHasForward = 1, kHasStates = 2, kLifted = 4;

}  // namespace detail

/// Binary dump: "VLFT1", then little-endian u64 n_paths, n_steps, dim,
/// lift_coords, flags, seed, stream; f64 t0, T; then increments, X, controls,
/// forward (flag), coords, states (flag), flagged bytes.
inline void write_ensemble_binary(const PathEnsemble& e, std::ostream& out) {
  out.write(detail::kMagic, 5);
  std::uint64_t flags = 0;
  if (e.forward.size() > 0) flags |= detail::kHasForward;
  if (e.has_states()) flags |= detail::kHasStates;
  if (e.lifted) flags |= detail::kLifted;
  detail::put_u64(out, e.n_paths());
  detail::put_u64(out, e.n_steps());
  detail::put_u64(out, e.dim);
  detail::put_u64(out, e.lift_coords);
  detail::put_u64(out, flags);
  detail::put_u64(out, e.grid->seed);
  detail::put_u64(out, static_cast<std::uint64_t>(e.grid->stream));
  detail::put_f64(out, e.grid->t0);
  detail::put_f64(out, e.grid->T);
  detail::put_matrix(out, e.grid->increments);
  detail::put_matrix(out, e.X);
  detail::put_matrix(out, e.controls);
  if (flags & detail::kHasForward) detail::put_matrix(out, e.forward);
  detail::put_matrix(out, e.coords);
  if (flags & detail::kHasStates)
    for (double v : e.states) detail::put_f64(out, v);
  for (double v : e.sup_norm) detail::put_f64(out, v);
  out.write(reinterpret_cast<const char*>(e.flagged.data()),
            static_cast<std::streamsize>(e.flagged.size()));
}

inline PathEnsemble read_ensemble_binary(std::istream& in) {
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, detail::kMagic, 5) != 0)
    throw std::runtime_error("not a VLFT1 ensemble dump");
  const std::size_t P = detail::get_u64(in), N = detail::get_u64(in), d = detail::get_u64(in),
                    m = detail::get_u64(in);
  const std::uint64_t flags = detail::get_u64(in);
  auto grid = std::make_shared<BrownianGrid>();
  grid->seed = detail::get_u64(in);
  grid->stream = static_cast<Stream>(detail::get_u64(in));
  grid->t0 = detail::get_f64(in);
  grid->T = detail::get_f64(in);
  grid->n_steps = N;
  detail::get_matrix(in, grid->increments, P, N);
  PathEnsemble e;
  e.dim = d;
  e.lift_coords = m;
  e.lifted = flags & detail::kLifted;
  detail::get_matrix(in, e.X, P, N + 1);
  detail::get_matrix(in, e.controls, P, N);
  if (flags & detail::kHasForward) detail::get_matrix(in, e.forward, P, N + 1);
  detail::get_matrix(in, e.coords, P, m ? (N + 1) * m : 0);
  if (flags & detail::kHasStates) {
    e.states.resize(P * (N + 1) * d);
    for (double& v : e.states) v = detail::get_f64(in);
  }
  e.sup_norm.resize(e.lifted ? P : 0);
  for (double& v : e.sup_norm) v = detail::get_f64(in);
  e.flagged.resize(P);
  if (!in.read(reinterpret_cast<char*>(e.flagged.data()), static_cast<std::streamsize>(P)))
    throw std::runtime_error("truncated ensemble dump");
  e.grid = std::move(grid);
  return e;
}

/// Policy trace CSV: path_id,step,t,X,u.
inline void write_policy_trace(const PathEnsemble& e, std::ostream& out, std::size_t max_paths) {
  const auto old = out.precision(17);
  out << "path_id,step,t,X,u\n";
  const std::size_t P = std::min(max_paths, e.n_paths());
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < e.n_steps(); ++k) {
      const auto ip = static_cast<Eigen::Index>(p), ik = static_cast<Eigen::Index>(k);
      out << p << ',' << k << ',' << e.grid->time(k) << ',' << e.X(ip, ik) << ','
          << e.controls(ip, ik) << '\n';
    }
  out.precision(old);
}

/// Reloadable per-step coefficients of a BsdeSolution or ValueFunction.
struct SolutionBundle {
  int format_version = 1;
  std::string method;  // lsmc | picard
  BasisSpec basis;
  std::size_t n_steps = 0;
  double t0 = 0.0;
  double T = 1.0;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  std::string lift;
  double value = 0.0;
  double std_error = 0.0;
  std::vector<Eigen::VectorXd> primary;    // p or w
  std::vector<Eigen::VectorXd> secondary;  // q (lsmc only)

  StepwiseFit fit(std::function<double(double)> terminal) const {
    StepwiseFit f;
    f.basis = basis;
    f.n_steps = n_steps;
    f.coef = primary;
    f.terminal = std::move(terminal);
    return f;
  }
};

inline std::string describe_lift(const DiscreteLift& lift) {
  std::ostringstream s;
  s << std::setprecision(17) << to_string(lift.kind()) << " dim=" << lift.dim()
    << " dt=" << lift.dt();
  return s.str();
}

inline SolutionBundle make_bundle(const BsdeSolution& sol, const DiscreteLift& lift) {
  SolutionBundle b;
  b.method = "lsmc";
  b.basis = sol.p.basis;
  b.n_steps = sol.n_steps();
  b.t0 = sol.t0;
  b.T = sol.T;
  b.seed = sol.seed;
  b.n_paths = sol.n_paths;
  b.lift = describe_lift(lift);
  b.value = sol.v0;
  b.std_error = sol.std_error;
  b.primary = sol.p.coef;
  b.secondary = sol.q_coef;
  return b;
}

inline SolutionBundle make_bundle(const ValueFunction& vf, const DiscreteLift& lift) {
  SolutionBundle b;
  b.method = "picard";
  b.basis = vf.w.basis;
  b.n_steps = vf.n_steps();
  b.t0 = vf.t0;
  b.T = vf.T;
  b.seed = vf.seed;
  b.n_paths = vf.n_paths;
  b.lift = describe_lift(lift);
  b.value = vf.w0;
  b.std_error = vf.std_error;
  b.primary = vf.w.coef;
  return b;
}

inline std::string step_file_name(std::size_t k) {
  std::ostringstream s;
  s << "step_" << std::setw(4) << std::setfill('0') << k << ".csv";
  return s.str();
}

/// Directory with manifest.txt and one step_KKKK.csv per step (term,coefficients).
inline void write_bundle(const SolutionBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto m = open_output(dir / "manifest.txt");
    m << "format_version = " << b.format_version << '\n'
      << "method = " << b.method << '\n'
      << "n_steps = " << b.n_steps << '\n'
      << "t0 = " << b.t0 << '\n'
      << "T = " << b.T << '\n'
      << "seed = " << b.seed << '\n'
      << "n_paths = " << b.n_paths << '\n'
      << "lift = " << b.lift << '\n'
      << "basis_x_degree = " << b.basis.x_degree << '\n'
      << "basis_forward_degree = " << b.basis.forward_degree << '\n'
      << "basis_cross_term = " << (b.basis.cross_term ? 1 : 0) << '\n'
      << "basis_lift_coords = " << b.basis.lift_coords << '\n'
      << "basis_ridge = " << b.basis.ridge << '\n'
      << "value = " << b.value << '\n'
      << "std_error = " << b.std_error << '\n';
  }
  const auto names = b.basis.term_names();
  const bool with_q = !b.secondary.empty();
  for (std::size_t k = 0; k < b.n_steps; ++k) {
    auto out = open_output(dir / step_file_name(k));
    out << (with_q ? "term,p_coef,q_coef\n" : "term,w_coef\n");
    for (std::size_t j = 0; j < names.size(); ++j) {
      out << names[j] << ',' << b.primary[k](static_cast<Eigen::Index>(j));
      if (with_q) out << ',' << b.secondary[k](static_cast<Eigen::Index>(j));
      out << '\n';
    }
  }
}

inline SolutionBundle read_bundle(const fs::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw std::runtime_error("missing manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(m, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("bundle manifest lacks '" + key + "'");
    return it->second;
  };
  SolutionBundle b;
  b.format_version = std::stoi(get("format_version"));
  if (b.format_version != 1) throw std::runtime_error("unsupported bundle format version");
  b.method = get("method");
  b.n_steps = std::stoull(get("n_steps"));
  b.t0 = std::stod(get("t0"));
  b.T = std::stod(get("T"));
  b.seed = std::stoull(get("seed"));
  b.n_paths = std::stoull(get("n_paths"));
  b.lift = get("lift");
  b.basis.x_degree = std::stoi(get("basis_x_degree"));
  b.basis.forward_degree = std::stoi(get("basis_forward_degree"));
  b.basis.cross_term = get("basis_cross_term") == "1";
  b.basis.lift_coords = std::stoull(get("basis_lift_coords"));
  b.basis.ridge = std::stod(get("basis_ridge"));
  b.value = std::stod(get("value"));
  b.std_error = std::stod(get("std_error"));
  const std::size_t p = b.basis.size();
  for (std::size_t k = 0; k < b.n_steps; ++k) {
    std::ifstream in(dir / step_file_name(k));
    if (!in) throw std::runtime_error("missing " + step_file_name(k));
    std::string line;
    std::getline(in, line);
    const bool with_q = line.find("q_coef") != std::string::npos;
    Eigen::VectorXd pc(static_cast<Eigen::Index>(p)), qc(static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::getline(in, line)) throw std::runtime_error("short " + step_file_name(k));
      std::stringstream row(line);
      std::string cell;
      std::getline(row, cell, ',');
      std::getline(row, cell, ',');
      pc(static_cast<Eigen::Index>(j)) = std::stod(cell);
      if (with_q) {
        std::getline(row, cell, ',');
        qc(static_cast<Eigen::Index>(j)) = std::stod(cell);
      }
    }
    b.primary.push_back(pc);
    if (with_q) b.secondary.push_back(qc);
  }
  return b;
}

}  // namespace vlift
