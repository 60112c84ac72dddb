#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cfcc/distribution.hpp"
#include "cfcc/gil_pelaez.hpp"
#include "cfcc/quadrature.hpp"

namespace cfcc {

// One constraint in standard form P(q(z) + g(z)^T w <= 0) >= gamma with
// independent scalar components w_j. q and g may be arbitrary smooth
// callables of the decision vector z.
struct AffineChanceConstraint {
  std::function<double(std::span<const double>)> q;
  std::function<std::vector<double>(std::span<const double>)> grad_q;
  std::function<std::vector<double>(std::span<const double>)> g;   // m values
  // m x n row-major Jacobian of g; leave unset to declare it identically zero.
  std::function<std::vector<double>(std::span<const double>)> grad_g;
  std::vector<Distribution> w;
  double gamma = 0.95;
};

// Instrumentation counters (optional, aggregated across one evaluation).
struct EvalCounters {
  long long cf_component_batches = 0;   // component CF batches (one per j per subinterval)
  long long cf_part_batches = 0;        // mixture-part CF batches
  long long cf_prime_part_batches = 0;  // mixture-part CF-derivative batches
  long long subintervals = 0;
  long long integrand_batches = 0;      // batch-integrand invocations
};

struct EvalOptions {
  quad::Tol tol{};
  bool share_intermediates = true;   // false: debug mode, recompute per use site
  EvalCounters* counters = nullptr;
};

struct ProbabilityResult {
  double beta = 0.0;   // clamped to [0,1]
  double raw = 0.0;
  double error = 0.0;
  int subdivisions = 0;
  int batch_calls = 0;
};

struct GradientResult {
  std::vector<double> grad;   // d beta / d z
  double beta = 0.0;
  double density = 0.0;       // p_lambda(-q(z))
  double error = 0.0;
  int subdivisions = 0;
  int batch_calls = 0;
};

// phi_lambda(t; z) = prod_j phi_{w_j}(g_j(z) t); zero factors contribute 1.
std::vector<cplx> lambda_cf(const AffineChanceConstraint& c,
                            std::span<const double> z,
                            std::span<const double> ts);

// Gradient-integrand weight vectors xi(z, t) = sum_j alpha_j(z, t) grad g_j(z),
// row-major ts.size() x n. Throws VanishingCf when a component CF magnitude
// drops below 1e-300 at a node.
std::vector<cplx> xi(const AffineChanceConstraint& c, std::span<const double> z,
                     std::span<const double> ts);

// beta(z) = P(q + g^T w <= 0) via Gil-Pelaez on the product CF.
ProbabilityResult probability(const AffineChanceConstraint& c,
                              std::span<const double> z,
                              const EvalOptions& opts = {});

// beta plus d beta / d z (density term + oscillatory term).
GradientResult gradient(const AffineChanceConstraint& c,
                        std::span<const double> z,
                        const EvalOptions& opts = {});

// gamma - beta and its gradient (-d beta/d z); feasible when <= 0.
struct ResidualResult {
  double residual = 0.0;
  std::vector<double> grad;
  double beta = 0.0;
};
ResidualResult constraint_residual(const AffineChanceConstraint& c,
                                   std::span<const double> z,
                                   const EvalOptions& opts = {});

// lambda-CF of a constraint at fixed z as a CfProvider (for inversion checks).
class LambdaCf : public CfProvider {
 public:
  LambdaCf(const AffineChanceConstraint& c, std::vector<double> z)
      : c_(&c), z_(std::move(z)) {}
  void cf(std::span<const double> t, std::span<cplx> out) const override;

 private:
  const AffineChanceConstraint* c_;
  std::vector<double> z_;
};

// Batch evaluation over many constraints at one z (the solver inner kernel).
// `parallel` uses OpenMP when available; the serial path is the reference.
enum class ExecMode { serial, parallel };
std::vector<GradientResult> gradient_batch(
    std::span<const AffineChanceConstraint> cs, std::span<const double> z,
    const EvalOptions& opts, ExecMode mode);
std::vector<ProbabilityResult> probability_batch(
    std::span<const AffineChanceConstraint> cs, std::span<const double> z,
    const EvalOptions& opts, ExecMode mode);

}  // namespace cfcc
