#pragma once

#include <functional>
#include <span>
#include <vector>

namespace cfcc::quad {

// Gauss-Kronrod 7-15 on [-1,1], nodes ascending. The 7 Gauss nodes sit at the
// odd Kronrod indices; kGaussWeights is zero at Kronrod-only indices.
inline constexpr int kNodeCount = 15;
extern const double kNodes[kNodeCount];
extern const double kKronrodWeights[kNodeCount];
extern const double kGaussWeights[kNodeCount];

struct Tol {
  double abs = 1e-10;
  double rel = 1e-8;
  int max_subdiv = 50;
};

// Evaluates `channels` integrand channels at a batch of abscissae:
// out[c * t.size() + i] = f_c(t[i]). Invoked once per refinement round, so
// every channel shares one evaluation pass over each subinterval.
using BatchIntegrand =
    std::function<void(std::span<const double> t, std::span<double> out)>;

struct QuadratureResult {
  std::vector<double> values;   // one per channel
  double error = 0.0;           // summed error estimate (worst channel per piece)
  int subdivisions = 0;         // subintervals processed (initial + children)
  int batch_calls = 0;          // integrand invocations = 1 + bisections
};

struct Gk15Eval {
  double kronrod = 0.0;
  double gauss = 0.0;
  double error = 0.0;   // min(d, (200 d)^1.5), d = |kronrod - gauss|
};

// Single-panel rule application; f is treated as one channel (out size 15).
Gk15Eval gk15_apply(const BatchIntegrand& f, double a, double b);
Gk15Eval gk15_apply(const std::function<double(double)>& f, double a, double b);

// Initial breakpoints in u-space for the mapped half-line t = u/(1-u): no
// initial subinterval spans more than one period 2*pi/omega in t, capped at
// 64 intervals. omega <= 0 yields {0, u_max}.
std::vector<double> periodic_aware_partition(double omega, double u_max);

// Adaptive GK7-15 over [0, inf) under t = u/(1-u), dt = du/(1-u)^2.
// Worst-error-first bisection until sum(err) <= max(tol.abs, tol.rel*|value|)
// or the subdivision budget is exhausted (then ToleranceNotMet carrying the
// partial values). u_breaks (default {0,1}) seeds the interval set; the
// budget is max(tol.max_subdiv, 2 * initial interval count).
QuadratureResult integrate_semi_infinite(const BatchIntegrand& f, int channels,
                                         const Tol& tol,
                                         std::span<const double> u_breaks = {});

// Same engine on a finite interval; t_breaks are physical abscissae and must
// be ascending with at least two entries.
QuadratureResult integrate_finite(const BatchIntegrand& f, int channels,
                                  const Tol& tol,
                                  std::span<const double> t_breaks);

}  // namespace cfcc::quad
