#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cfcc {

// Base for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument values (non-finite node, invalid parameter, malformed vector).
struct InvalidInput : Error {
  using Error::Error;
};

// Config / distribution-spec text that does not parse; message carries
// line or position context.
struct ParseError : Error {
  using Error::Error;
};

// mean() on a distribution without one (cauchy).
struct UndefinedMean : Error {
  using Error::Error;
};

// cf_prime at a point where the CF is not differentiable (cauchy at t=0).
struct NonDifferentiableCf : Error {
  using Error::Error;
};

// A component CF vanished below the representable floor at a quadrature node.
struct VanishingCf : Error {
  VanishingCf(std::string msg, int component, double node)
      : Error(std::move(msg)), component(component), node(node) {}
  int component;
  double node;
};

// Integrand produced a non-finite value; node retained for diagnosis.
struct NonFiniteIntegrand : Error {
  NonFiniteIntegrand(std::string msg, double node) : Error(std::move(msg)), node(node) {}
  double node;
};

// Subdivision budget exhausted with the error estimate still above tolerance.
// Best values and the achieved error ride along.
struct ToleranceNotMet : Error {
  ToleranceNotMet(std::string msg, std::vector<double> values, double error)
      : Error(std::move(msg)), values(std::move(values)), error(error) {}
  std::vector<double> values;
  double error;
};

}  // namespace cfcc
