#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vlift {

// Time argument outside the kernel's domain [0, horizon].
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Kernel evaluated at t = 0 although it blows up there.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t got)
      : std::invalid_argument(what + ": expected dimension " + std::to_string(expected) +
                              ", got " + std::to_string(got)) {}
};

// A lift could not be built (off-grid horizon, bad nodes, tolerance exceeded).
class LiftError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Too many non-finite paths, or non-finite derivative probes.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RegressionError : public std::runtime_error {
 public:
  RegressionError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ControlError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void expect_dim(const char* what, std::size_t expected, std::size_t got) {
  if (expected != got) throw DimensionError(what, expected, got);
}

}  // namespace vlift
