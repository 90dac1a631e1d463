#pragma once

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "vlift/errors.hpp"

namespace vlift {

/// Convolution kernel K on [0, horizon].
///
/// `antiderivative` is t -> int_0^t K(s) ds when a closed form is known.
/// `laplace_density` is m with K(t) = int_0^inf exp(-x t) m(x) dx, when the
/// kernel is completely monotone with a density. Exponential kernels carry
/// their single rate in `exponential_rate` instead (atomic measure).
struct Kernel {
  std::string name;
  std::function<double(double)> evaluator;
  double horizon = 1.0;
  bool singular_at_zero = false;
  std::function<double(double)> antiderivative;
  std::function<double(double)> laplace_density;
  std::optional<double> exponential_rate;
};

inline double eval_kernel(const Kernel& kernel, double t) {
  if (!(t >= 0.0) || t > kernel.horizon * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "kernel '" << kernel.name << "' evaluated at t=" << t << " outside [0, "
        << kernel.horizon << "]";
    throw DomainError(msg.str());
  }
  if (t == 0.0 && kernel.singular_at_zero)
    throw SingularityError("kernel '" + kernel.name + "' is singular at t=0");
  return kernel.evaluator(t);
}

// K(t) = sqrt(t): the optimal-consumption kernel, lifted by the shift semigroup.
inline Kernel sqrt_kernel(double horizon = 1.0) {
  Kernel k;
  k.name = "sqrt";
  k.evaluator = [](double t) { return std::sqrt(t); };
  k.horizon = horizon;
  k.antiderivative = [](double t) { return 2.0 / 3.0 * t * std::sqrt(t); };
  return k;
}

// K(t) = 1/(t+eps), the Laplace transform of exp(-eps x).
inline Kernel laplace_kernel(double eps, double horizon = 1.0) {
  if (!(eps > 0.0)) throw std::invalid_argument("laplace kernel needs eps > 0");
  Kernel k;
  std::ostringstream name;
  name << "laplace(eps=" << eps << ")";
  k.name = name.str();
  k.evaluator = [eps](double t) { return 1.0 / (t + eps); };
  k.horizon = horizon;
  k.antiderivative = [eps](double t) { return std::log((t + eps) / eps); };
  k.laplace_density = [eps](double x) { return std::exp(-eps * x); };
  return k;
}

// K(t) = exp(-lambda t); its Laplace measure is a unit atom at lambda.
inline Kernel exp_kernel(double lambda, double horizon = 1.0) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("exp kernel needs lambda >= 0");
  Kernel k;
  std::ostringstream name;
  name << "exp(lambda=" << lambda << ")";
  k.name = name.str();
  k.evaluator = [lambda](double t) { return std::exp(-lambda * t); };
  k.horizon = horizon;
  k.antiderivative = [lambda](double t) {
    return lambda == 0.0 ? t : (1.0 - std::exp(-lambda * t)) / lambda;
  };
  k.exponential_rate = lambda;
  return k;
}

/// int_0^T K(s)^2 ds by tanh-sinh quadrature (copes with integrable endpoint
/// singularities). Returns +inf when the quadrature does not settle.
inline double square_integral(const Kernel& kernel) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  double err = 0.0;
  double l1 = 0.0;
  const double value = integrator.integrate(
      [&](double s) {
        const double v = kernel.evaluator(s);
        return v * v;
      },
      0.0, kernel.horizon, 1e-10, &err, &l1);
  if (!std::isfinite(value) || err > 1e-6 * (1.0 + std::abs(value)))
    return std::numeric_limits<double>::infinity();
  return value;
}

struct KernelSpec {
  std::string family;  // sqrt | laplace | exp
  double parameter = 0.0;
};

/// Parses the catalog names used in config files: `sqrt`, `laplace(eps=0.5)`,
/// `exp(lambda=2)`.
inline KernelSpec parse_kernel_spec(const std::string& text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  const auto open = s.find('(');
  KernelSpec spec;
  spec.family = s.substr(0, open);
  if (spec.family == "sqrt") {
    if (open != std::string::npos && s.substr(open) != "()")
      throw ConfigError("kernel 'sqrt' takes no parameters: " + text);
    return spec;
  }
  if (spec.family != "laplace" && spec.family != "exp")
    throw ConfigError("unknown kernel family: " + text);
  const std::string key = spec.family == "laplace" ? "eps" : "lambda";
  if (open == std::string::npos || s.back() != ')')
    throw ConfigError("kernel '" + spec.family + "' needs (" + key + "=...): " + text);
  const std::string inner = s.substr(open + 1, s.size() - open - 2);
  const auto eq = inner.find('=');
  if (eq == std::string::npos || inner.substr(0, eq) != key)
    throw ConfigError("expected " + key + "=<value> in kernel spec: " + text);
  try {
    std::size_t used = 0;
    spec.parameter = std::stod(inner.substr(eq + 1), &used);
    if (used != inner.size() - eq - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad numeric parameter in kernel spec: " + text);
  }
  return spec;
}

inline Kernel make_kernel(const KernelSpec& spec, double horizon) {
  if (spec.family == "sqrt") return sqrt_kernel(horizon);
  if (spec.family == "laplace") return laplace_kernel(spec.parameter, horizon);
  if (spec.family == "exp") return exp_kernel(spec.parameter, horizon);
  throw ConfigError("unknown kernel family: " + spec.family);
}

}  // namespace vlift
