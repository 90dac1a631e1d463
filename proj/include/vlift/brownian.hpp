#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace vlift {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named substreams; every random draw in the toolkit is keyed by
/// (seed, stream, index).
enum class Stream : std::uint64_t {
  forward = 1,
  closed_loop = 2,
  verification = 3,
  policy_draws = 4,
  probe_states = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

/// Brownian increments on a uniform grid, one row per path.
struct BrownianGrid {
  double t0 = 0.0;
  double T = 1.0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
  Stream stream = Stream::forward;
  RowMatrix increments;  // n_paths x n_steps, N(0, dt)

  double dt() const { return (T - t0) / static_cast<double>(n_steps); }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt(); }
  std::size_t n_paths() const { return static_cast<std::size_t>(increments.rows()); }
};

inline BrownianGrid make_brownian_grid(double t0, double T, std::size_t n_steps,
                                       std::size_t n_paths, std::uint64_t seed,
                                       Stream stream = Stream::forward) {
  if (n_steps == 0) throw std::invalid_argument("Brownian grid needs at least one step");
  if (!(T > t0)) throw std::invalid_argument("Brownian grid needs T > t0");
  BrownianGrid grid;
  grid.t0 = t0;
  grid.T = T;
  grid.n_steps = n_steps;
  grid.seed = seed;
  grid.stream = stream;
  grid.increments.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(n_steps));
  const double sd = std::sqrt(grid.dt());
  for (std::size_t p = 0; p < n_paths; ++p) {
    std::mt19937_64 rng(derive_seed(seed, stream, p));
    std::normal_distribution<double> normal(0.0, sd);
    for (std::size_t k = 0; k < n_steps; ++k)
      grid.increments(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = normal(rng);
  }
  return grid;
}

}  // namespace vlift
